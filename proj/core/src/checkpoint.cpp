#include "laat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "config_json.hpp"
#include "laat/errors.hpp"
#include "laat/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace laat {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'L', 'A', 'A', 'T', 'C', 'K', 'P', '1'};
constexpr int kFormatVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const LaatModel& model,
                     const TokenVocab& tokens, const CodeVocabulary& codes) {
  json params = json::array();
  for (const auto& p : model.parameters())
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});

  json header{{"format_version", kFormatVersion},
              {"config", laat_config_to_json(model.config())},
              {"vocab_hash", vocabulary_hash(tokens, codes)},
              {"tokens", tokens.tokens},
              {"raw_codes", codes.raw_codes},
              {"normalized_codes", codes.normalized_codes},
              {"parent_of", codes.parent_of},
              {"params", params}};
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : model.parameters()) {
    const auto& d = p.tensor.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("checkpoint " + path + ": bad magic");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1ull << 31))
    throw ParseError("checkpoint " + path + ": bad header length");
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError("checkpoint " + path + ": truncated header");

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path + ": header: " + e.what());
  }

  try {
    if (header.at("format_version").get<int>() != kFormatVersion)
      throw ParseError("checkpoint " + path + ": unsupported format version " +
                       std::to_string(header.at("format_version").get<int>()));

    const LaatConfig config = laat_config_from_json(header.at("config"));
    config.validate();

    TokenVocab tokens;
    tokens.tokens = header.at("tokens").get<std::vector<std::string>>();
    for (size_t i = 0; i < tokens.tokens.size(); ++i)
      tokens.index[tokens.tokens[i]] = static_cast<int>(i);
    if (tokens.size() < 2 || tokens.tokens[kPadId] != kPadToken ||
        tokens.tokens[kUnkId] != kUnkToken)
      throw ParseError("checkpoint " + path + ": malformed token vocabulary");

    CodeVocabulary codes;
    codes.raw_codes = header.at("raw_codes").get<std::vector<std::string>>();
    codes.normalized_codes =
        header.at("normalized_codes").get<std::vector<std::string>>();
    codes.parent_of = header.at("parent_of").get<std::vector<int>>();
    if (codes.parent_of.size() != codes.raw_codes.size())
      throw ParseError("checkpoint " + path + ": malformed code hierarchy");
    for (size_t i = 0; i < codes.raw_codes.size(); ++i)
      codes.raw_index[codes.raw_codes[i]] = static_cast<int>(i);
    for (size_t i = 0; i < codes.normalized_codes.size(); ++i)
      codes.normalized_index[codes.normalized_codes[i]] = static_cast<int>(i);

    const uint64_t stored_hash = header.at("vocab_hash").get<uint64_t>();
    if (stored_hash != vocabulary_hash(tokens, codes))
      throw ParseError("checkpoint " + path + ": vocabulary hash mismatch");

    Rng init_rng(0);
    LaatModel model(config, init_rng);
    auto params = model.parameters();
    const auto& plist = header.at("params");
    if (plist.size() != params.size())
      throw ParseError("checkpoint " + path + ": parameter list mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& entry = plist[i];
      if (entry.at("name").get<std::string>() != params[i].name)
        throw ParseError("checkpoint " + path + ": unexpected parameter " +
                         entry.at("name").get<std::string>());
      if (entry.at("shape").get<std::vector<int>>() != params[i].tensor.shape())
        throw ParseError("checkpoint " + path + ": shape mismatch for " +
                         params[i].name);
      auto& d = params[i].tensor.data();
      in.read(reinterpret_cast<char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
      if (!in)
        throw ParseError("checkpoint " + path + ": truncated data for " +
                         params[i].name);
    }
    char extra;
    if (in.read(&extra, 1))
      throw ParseError("checkpoint " + path + ": trailing bytes");

    LoadedCheckpoint loaded{std::move(model), std::move(tokens),
                            std::move(codes), stored_hash};
    return loaded;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path + ": header: " + e.what());
  }
}

}  // namespace laat
