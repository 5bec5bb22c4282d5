#include "laat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "laat/errors.hpp"
#include "laat/rng.hpp"

namespace laat {

using nlohmann::json;

std::string single_trigger_code_name(int k) {
  std::ostringstream os;
  os << '1' << (k < 10 ? "0" : "") << k << ".0";
  return os.str();
}

std::string compound_code_name(int k) {
  std::ostringstream os;
  os << '2' << (k < 10 ? "0" : "") << k << ".0";
  return os.str();
}

std::string tail_code_name(int family, int child) {
  std::ostringstream os;
  os << '9' << (family < 10 ? "0" : "") << family << '.' << child;
  return os.str();
}

int SyntheticSpec::trigger_token_count() const {
  return num_single_trigger_codes + 2 * num_compound_codes +
         tail.num_parents * tail.children_per_parent;
}

void SyntheticSpec::validate() const {
  if (num_documents < 1) throw ConfigError("num_documents must be >= 1");
  if (doc_len_min < 1 || doc_len_max < doc_len_min)
    throw ConfigError("doc length range invalid: [" +
                      std::to_string(doc_len_min) + "," +
                      std::to_string(doc_len_max) + "]");
  if (num_single_trigger_codes < 0 || num_compound_codes < 0 ||
      tail.num_parents < 0 || tail.children_per_parent < 0)
    throw ConfigError("code counts must be non-negative");
  if (num_single_trigger_codes + num_compound_codes +
          tail.num_parents * tail.children_per_parent ==
      0)
    throw ConfigError("spec defines no codes");
  for (double p : {single_trigger_probability, compound_both_probability,
                   compound_lone_probability, tail.base_probability})
    if (p < 0.0 || p > 1.0) throw ConfigError("probabilities must be in [0,1]");
  if (compound_both_probability + 2 * compound_lone_probability > 1.0)
    throw ConfigError("compound both+lone probabilities exceed 1");
  if (num_compound_codes > 0) {
    if (min_separation < 1)
      throw ConfigError("compound codes need min_separation >= 1");
    if (doc_len_min < min_separation + 1)
      throw ConfigError("min_separation " + std::to_string(min_separation) +
                        " does not fit the minimum document length " +
                        std::to_string(doc_len_min));
  }
  const int triggers = trigger_token_count();
  if (vocab_size < triggers + 10)
    throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                      " too small for " + std::to_string(triggers) +
                      " trigger tokens plus filler");
  // Worst case every code plants in one document; leave room for fillers.
  const int max_plantings = num_single_trigger_codes + 2 * num_compound_codes +
                            tail.num_parents * tail.children_per_parent;
  if (doc_len_min < 2 * max_plantings)
    throw ConfigError("doc_len_min " + std::to_string(doc_len_min) +
                      " cannot hold up to " + std::to_string(max_plantings) +
                      " planted triggers");
  const double fsum = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  if (docs_per_patient < 1) throw ConfigError("docs_per_patient must be >= 1");
}

SyntheticSpec parse_synthetic_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  SyntheticSpec s;
  try {
    s.num_documents = j.value("num_documents", s.num_documents);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    if (j.contains("doc_length")) {
      s.doc_len_min = j["doc_length"].value("min", s.doc_len_min);
      s.doc_len_max = j["doc_length"].value("max", s.doc_len_max);
    }
    s.num_single_trigger_codes =
        j.value("single_trigger_codes", s.num_single_trigger_codes);
    s.single_trigger_probability =
        j.value("single_trigger_probability", s.single_trigger_probability);
    s.num_compound_codes = j.value("compound_codes", s.num_compound_codes);
    s.compound_both_probability =
        j.value("compound_both_probability", s.compound_both_probability);
    s.compound_lone_probability =
        j.value("compound_lone_probability", s.compound_lone_probability);
    s.min_separation = j.value("min_separation", s.min_separation);
    if (j.contains("rare_families")) {
      const auto& t = j["rare_families"];
      s.tail.num_parents = t.value("num_parents", s.tail.num_parents);
      s.tail.children_per_parent =
          t.value("children_per_parent", s.tail.children_per_parent);
      s.tail.alpha = t.value("alpha", s.tail.alpha);
      s.tail.base_probability =
          t.value("base_probability", s.tail.base_probability);
    }
    if (j.contains("split_fractions")) {
      auto f = j["split_fractions"].get<std::vector<double>>();
      if (f.size() != 3)
        throw ConfigError("split_fractions must have 3 entries");
      s.split_fractions = {f[0], f[1], f[2]};
    }
    s.docs_per_patient = j.value("docs_per_patient", s.docs_per_patient);
  } catch (const json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic spec " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_synthetic_spec(buf.str());
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  json j{
      {"num_documents", s.num_documents},
      {"vocab_size", s.vocab_size},
      {"doc_length", {{"min", s.doc_len_min}, {"max", s.doc_len_max}}},
      {"single_trigger_codes", s.num_single_trigger_codes},
      {"single_trigger_probability", s.single_trigger_probability},
      {"compound_codes", s.num_compound_codes},
      {"compound_both_probability", s.compound_both_probability},
      {"compound_lone_probability", s.compound_lone_probability},
      {"min_separation", s.min_separation},
      {"rare_families",
       {{"num_parents", s.tail.num_parents},
        {"children_per_parent", s.tail.children_per_parent},
        {"alpha", s.tail.alpha},
        {"base_probability", s.tail.base_probability}}},
      {"split_fractions",
       {s.split_fractions[0], s.split_fractions[1], s.split_fractions[2]}},
      {"docs_per_patient", s.docs_per_patient},
  };
  return j.dump(2);
}

namespace {

struct Planting {
  std::string token;
  int position;
};

int pick_free(Rng& rng, int lo, int hi, std::set<int>& used) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const int p = rng.uniform_int(lo, hi);
    if (used.insert(p).second) return p;
  }
  throw ConfigError("could not place a trigger; document too crowded");
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec,
                                          uint64_t seed) {
  spec.validate();

  // Token inventory: triggers first, filler fills the rest of vocab_size.
  std::vector<std::string> single_trig(spec.num_single_trigger_codes);
  for (int k = 0; k < spec.num_single_trigger_codes; ++k)
    single_trig[k] = "sig" + std::to_string(k) + "x";
  std::vector<std::string> comp_a(spec.num_compound_codes), comp_b(spec.num_compound_codes);
  for (int k = 0; k < spec.num_compound_codes; ++k) {
    comp_a[k] = "alpha" + std::to_string(k) + "x";
    comp_b[k] = "beta" + std::to_string(k) + "x";
  }
  std::vector<std::vector<std::string>> tail_trig(spec.tail.num_parents);
  for (int f = 0; f < spec.tail.num_parents; ++f)
    for (int c = 0; c < spec.tail.children_per_parent; ++c)
      tail_trig[f].push_back("rare" + std::to_string(f) + "c" + std::to_string(c) + "x");

  const int filler_count = spec.vocab_size - spec.trigger_token_count();
  std::vector<std::string> filler(filler_count);
  for (int i = 0; i < filler_count; ++i) filler[i] = "w" + std::to_string(i);

  Rng root(seed);
  SyntheticCorpus out;
  out.corpus.docs.reserve(spec.num_documents);
  out.planted.reserve(spec.num_documents);

  for (int di = 0; di < spec.num_documents; ++di) {
    Rng rng = root.substream("doc", static_cast<uint64_t>(di));
    const int len = rng.uniform_int(spec.doc_len_min, spec.doc_len_max);
    std::vector<std::string> tokens(len);
    for (auto& t : tokens) t = filler[rng.uniform_int(0, filler_count - 1)];

    std::set<int> used;
    PlantedInfo info;
    std::vector<std::string> gold;

    auto plant = [&](const std::string& tok, int lo, int hi) {
      const int p = pick_free(rng, lo, hi, used);
      tokens[p] = tok;
      return p;
    };

    for (int k = 0; k < spec.num_single_trigger_codes; ++k) {
      if (!rng.bernoulli(spec.single_trigger_probability)) continue;
      const int p = plant(single_trig[k], 0, len - 1);
      const std::string code = single_trigger_code_name(k);
      info.fired[code] = {p};
      gold.push_back(code);
    }

    for (int k = 0; k < spec.num_compound_codes; ++k) {
      const double r = rng.uniform01();
      const std::string code = compound_code_name(k);
      if (r < spec.compound_both_probability) {
        const int pa = pick_free(rng, 0, len - 1 - spec.min_separation, used);
        tokens[pa] = comp_a[k];
        const int pb = pick_free(rng, pa + spec.min_separation, len - 1, used);
        tokens[pb] = comp_b[k];
        info.fired[code] = {pa, pb};
        gold.push_back(code);
      } else if (r < spec.compound_both_probability + spec.compound_lone_probability) {
        info.lone[code] = {plant(comp_a[k], 0, len - 1)};
      } else if (r < spec.compound_both_probability + 2 * spec.compound_lone_probability) {
        info.lone[code] = {plant(comp_b[k], 0, len - 1)};
      }
    }

    for (int f = 0; f < spec.tail.num_parents; ++f) {
      for (int c = 0; c < spec.tail.children_per_parent; ++c) {
        const double p_fire =
            spec.tail.base_probability * std::pow(c + 1.0, -spec.tail.alpha);
        if (!rng.bernoulli(p_fire)) continue;
        const int pos = plant(tail_trig[f][c], 0, len - 1);
        const std::string code = tail_code_name(f, c);
        info.fired[code] = {pos};
        gold.push_back(code);
      }
    }

    RawDocument doc;
    doc.doc_id = "d" + std::to_string(100000 + di);
    doc.patient_id = "p" + std::to_string(di / spec.docs_per_patient);
    std::ostringstream text;
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (i) text << ' ';
      text << tokens[i];
    }
    doc.text = text.str();
    std::sort(gold.begin(), gold.end());
    doc.codes = std::move(gold);
    info.doc_id = doc.doc_id;
    out.corpus.docs.push_back(std::move(doc));
    out.planted.push_back(std::move(info));
  }
  return out;
}

void write_planted_metadata(const std::vector<PlantedInfo>& planted,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write planted metadata " + path);
  for (const auto& p : planted) {
    json j{{"doc_id", p.doc_id}, {"fired", p.fired}, {"lone", p.lone}};
    out << j.dump() << '\n';
  }
}

std::vector<PlantedInfo> read_planted_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open planted metadata " + path);
  std::vector<PlantedInfo> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      PlantedInfo p;
      p.doc_id = j.at("doc_id").get<std::string>();
      p.fired = j.at("fired").get<std::map<std::string, std::vector<int>>>();
      p.lone = j.at("lone").get<std::map<std::string, std::vector<int>>>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace laat
