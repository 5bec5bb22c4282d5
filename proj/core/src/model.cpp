#include "laat/model.hpp"

#include <cmath>

#include "laat/errors.hpp"

namespace laat {

std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::BiLstm: return "bilstm";
    case EncoderKind::BiGru: return "bigru";
    case EncoderKind::Cnn: return "cnn";
  }
  return "?";
}

std::string to_string(AttentionKind k) {
  return k == AttentionKind::Laat ? "laat" : "caml";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "bilstm") return EncoderKind::BiLstm;
  if (s == "bigru") return EncoderKind::BiGru;
  if (s == "cnn") return EncoderKind::Cnn;
  throw ConfigError("unknown encoder kind '" + s + "' (bilstm|bigru|cnn)");
}

AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "laat") return AttentionKind::Laat;
  if (s == "caml") return AttentionKind::Caml;
  throw ConfigError("unknown attention kind '" + s + "' (laat|caml)");
}

void LaatConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must cover PAD and UNK");
  if (embed_dim < 1 || hidden_size < 1 || attention_dim < 1 || num_labels < 1)
    throw ConfigError("model sizes must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ConfigError("dropout_p must be in [0,1)");
  if (cnn_kernel_width < 1 || cnn_kernel_width % 2 == 0)
    throw ConfigError("cnn_kernel_width must be odd and >= 1");
  if (joint) {
    if (joint->num_normalized_labels < 1 || joint->projection_size < 1)
      throw ConfigError("joint head sizes must be >= 1");
    if (joint->num_normalized_labels > num_labels)
      throw ConfigError("normalized label count exceeds raw label count");
  }
}

namespace {

Tensor glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, true);
}

// Fused gate matrices are initialized gate-block by gate-block so each block
// gets the bound of a u x d matrix.
Tensor glorot_gates(int gates, int u, int d, Rng& rng) {
  Tensor t = Tensor::zeros({gates * u, d}, true);
  const double bound = std::sqrt(6.0 / (u + d));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

RecurrentParams init_recurrent(int gates, int u, int d_in, bool lstm, Rng& rng) {
  RecurrentParams p;
  p.w_input = glorot_gates(gates, u, d_in, rng);
  p.w_recur = glorot_gates(gates, u, u, rng);
  p.bias = Tensor::zeros({gates * u}, true);
  if (lstm) {
    // Forget-gate bias starts at 1 so early training does not erase state.
    for (int r = u; r < 2 * u; ++r) p.bias.at(r) = 1.0;
  }
  return p;
}

AttentionParams init_attention(AttentionKind kind, int d_a, int two_u,
                               int labels, Rng& rng) {
  AttentionParams a;
  if (kind == AttentionKind::Laat) {
    a.w = glorot({d_a, two_u}, two_u, d_a, rng);
    a.u = glorot({labels, d_a}, d_a, labels, rng);
  } else {
    a.u = glorot({labels, two_u}, two_u, labels, rng);
  }
  return a;
}

OutputParams init_output(int labels, int in_dim, Rng& rng) {
  OutputParams o;
  // Each label owns an independent single-output affine map.
  const double bound = std::sqrt(6.0 / (in_dim + 1));
  o.weight = Tensor::uniform({labels, in_dim}, -bound, bound, rng, true);
  o.bias = Tensor::zeros({labels}, true);
  return o;
}

}  // namespace

LaatModel::LaatModel(const LaatConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int u = config_.hidden_size;
  const int two_u = 2 * u;

  embedding = Tensor::uniform({config_.vocab_size, config_.embed_dim}, -0.1, 0.1,
                              rng, !config_.freeze_embeddings);
  for (int c = 0; c < config_.embed_dim; ++c) embedding.at(kPadId, c) = 0.0;

  switch (config_.encoder) {
    case EncoderKind::BiLstm:
      forward_cell = init_recurrent(4, u, config_.embed_dim, true, rng);
      backward_cell = init_recurrent(4, u, config_.embed_dim, true, rng);
      break;
    case EncoderKind::BiGru:
      forward_cell = init_recurrent(3, u, config_.embed_dim, false, rng);
      backward_cell = init_recurrent(3, u, config_.embed_dim, false, rng);
      break;
    case EncoderKind::Cnn: {
      const int k = config_.cnn_kernel_width;
      conv.kernel = glorot({two_u, config_.embed_dim * k},
                           config_.embed_dim * k, two_u, rng);
      conv.bias = Tensor::zeros({two_u}, true);
      break;
    }
  }

  attn = init_attention(config_.attention, config_.attention_dim, two_u,
                        config_.num_labels, rng);
  const int out_in = two_u + (config_.joint ? config_.joint->projection_size : 0);
  output = init_output(config_.num_labels, out_in, rng);

  if (config_.joint) {
    attn_l1 = init_attention(config_.attention, config_.attention_dim, two_u,
                             config_.joint->num_normalized_labels, rng);
    output_l1 = init_output(config_.joint->num_normalized_labels, two_u, rng);
    projection = glorot({config_.joint->projection_size,
                         config_.joint->num_normalized_labels},
                        config_.joint->num_normalized_labels,
                        config_.joint->projection_size, rng);
  }
}

void LaatModel::set_embedding_matrix(const Tensor& matrix) {
  if (matrix.rows() != config_.vocab_size || matrix.cols() != config_.embed_dim)
    throw ShapeError("embedding matrix " + shape_str(matrix.shape()) +
                     " does not match config " +
                     shape_str({config_.vocab_size, config_.embed_dim}));
  embedding.data() = matrix.data();
}

std::vector<NamedParam> LaatModel::parameters() {
  std::vector<NamedParam> out;
  out.push_back({"embedding", embedding});
  switch (config_.encoder) {
    case EncoderKind::BiLstm:
    case EncoderKind::BiGru:
      out.push_back({"encoder.fw.w_input", forward_cell.w_input});
      out.push_back({"encoder.fw.w_recur", forward_cell.w_recur});
      out.push_back({"encoder.fw.bias", forward_cell.bias});
      out.push_back({"encoder.bw.w_input", backward_cell.w_input});
      out.push_back({"encoder.bw.w_recur", backward_cell.w_recur});
      out.push_back({"encoder.bw.bias", backward_cell.bias});
      break;
    case EncoderKind::Cnn:
      out.push_back({"encoder.conv.kernel", conv.kernel});
      out.push_back({"encoder.conv.bias", conv.bias});
      break;
  }
  if (config_.attention == AttentionKind::Laat)
    out.push_back({"attention.w", attn.w});
  out.push_back({"attention.u", attn.u});
  out.push_back({"output.weight", output.weight});
  out.push_back({"output.bias", output.bias});
  if (config_.joint) {
    if (config_.attention == AttentionKind::Laat)
      out.push_back({"attention_l1.w", attn_l1.w});
    out.push_back({"attention_l1.u", attn_l1.u});
    out.push_back({"output_l1.weight", output_l1.weight});
    out.push_back({"output_l1.bias", output_l1.bias});
    out.push_back({"projection", projection});
  }
  return out;
}

std::vector<NamedParam> LaatModel::parameters() const {
  return const_cast<LaatModel*>(this)->parameters();
}

int64_t LaatModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

int64_t LaatModel::expected_parameter_count(const LaatConfig& c) {
  c.validate();
  const int64_t u = c.hidden_size, de = c.embed_dim, da = c.attention_dim;
  const int64_t L = c.num_labels;
  int64_t n = static_cast<int64_t>(c.vocab_size) * de;  // embedding
  switch (c.encoder) {
    case EncoderKind::BiLstm: n += 2 * (4 * u * de + 4 * u * u + 4 * u); break;
    case EncoderKind::BiGru: n += 2 * (3 * u * de + 3 * u * u + 3 * u); break;
    case EncoderKind::Cnn: n += 2 * u * de * c.cnn_kernel_width + 2 * u; break;
  }
  auto attention_count = [&](int64_t labels) {
    return c.attention == AttentionKind::Laat ? da * 2 * u + labels * da
                                              : labels * 2 * u;
  };
  n += attention_count(L);
  const int64_t out_in = 2 * u + (c.joint ? c.joint->projection_size : 0);
  n += L * out_in + L;
  if (c.joint) {
    const int64_t l1 = c.joint->num_normalized_labels, p = c.joint->projection_size;
    n += attention_count(l1);
    n += l1 * 2 * u + l1;
    n += p * l1;
  }
  return n;
}

void LaatModel::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

LaatModel LaatModel::clone() const {
  LaatModel m(config_);
  m.embedding = embedding.clone();
  m.forward_cell = {forward_cell.w_input.defined() ? forward_cell.w_input.clone() : Tensor(),
                    forward_cell.w_recur.defined() ? forward_cell.w_recur.clone() : Tensor(),
                    forward_cell.bias.defined() ? forward_cell.bias.clone() : Tensor()};
  m.backward_cell = {backward_cell.w_input.defined() ? backward_cell.w_input.clone() : Tensor(),
                     backward_cell.w_recur.defined() ? backward_cell.w_recur.clone() : Tensor(),
                     backward_cell.bias.defined() ? backward_cell.bias.clone() : Tensor()};
  m.conv = {conv.kernel.defined() ? conv.kernel.clone() : Tensor(),
            conv.bias.defined() ? conv.bias.clone() : Tensor()};
  m.attn = {attn.w.defined() ? attn.w.clone() : Tensor(), attn.u.clone()};
  m.output = {output.weight.clone(), output.bias.clone()};
  if (config_.joint) {
    m.attn_l1 = {attn_l1.w.defined() ? attn_l1.w.clone() : Tensor(), attn_l1.u.clone()};
    m.output_l1 = {output_l1.weight.clone(), output_l1.bias.clone()};
    m.projection = projection.clone();
  }
  return m;
}

// ---- Attention ---------------------------------------------------------------

std::pair<Tensor, Tensor> label_attention(Tape& tape, const Tensor& H,
                                          const Tensor& W, const Tensor& U,
                                          int valid_len) {
  Tensor Z = tanh_elem(tape, matmul(tape, W, H));
  Tensor A = masked_softmax_rows(tape, matmul(tape, U, Z), valid_len);
  Tensor V = matmul(tape, H, transpose(tape, A));
  return {A, V};
}

std::pair<Tensor, Tensor> caml_attention(Tape& tape, const Tensor& H,
                                         const Tensor& u_caml, int valid_len) {
  Tensor A = masked_softmax_rows(tape, matmul(tape, u_caml, H), valid_len);
  Tensor V = matmul(tape, H, transpose(tape, A));
  return {A, V};
}

// ---- Output layer --------------------------------------------------------------

static Tensor label_logits(Tape& tape, const Tensor& V, const Tensor& context,
                           const OutputParams& out) {
  const int in_v = V.rows();
  const int labels = V.cols();
  const int in_ctx = context.defined() ? static_cast<int>(context.size()) : 0;
  if (out.weight.rows() != labels || out.weight.cols() != in_v + in_ctx ||
      out.bias.dim(0) != labels)
    throw ShapeError("output layer shapes mismatch: weight " +
                     shape_str(out.weight.shape()) + " vs V " +
                     shape_str(V.shape()) + " + context " +
                     std::to_string(in_ctx));
  Tensor logits = Tensor::zeros({labels});
  {
    const double* w = out.weight.data().data();
    const double* v = V.data().data();
    const double* ctx = in_ctx ? context.data().data() : nullptr;
    const double* b = out.bias.data().data();
    for (int i = 0; i < labels; ++i) {
      const double* wi = w + static_cast<size_t>(i) * (in_v + in_ctx);
      double s = b[i];
      for (int j = 0; j < in_v; ++j) s += wi[j] * v[static_cast<size_t>(j) * labels + i];
      for (int j = 0; j < in_ctx; ++j) s += wi[in_v + j] * ctx[j];
      logits.at(i) = s;
    }
  }
  const bool needs = tape.recording() &&
                     (V.requires_grad() || out.weight.requires_grad() ||
                      out.bias.requires_grad() ||
                      (context.defined() && context.requires_grad()));
  if (needs) {
    logits.set_requires_grad(true);
    Tensor tL = logits, tV = V, tC = context;
    OutputParams po = out;
    tape.record([tL, tV, tC, po, labels, in_v, in_ctx]() mutable {
      if (!tL.has_grad()) return;
      const auto& g = tL.grad();
      const double* w = po.weight.data().data();
      const double* v = tV.data().data();
      const double* ctx = in_ctx ? tC.data().data() : nullptr;
      double* dw = po.weight.requires_grad() ? po.weight.grad().data() : nullptr;
      double* db = po.bias.requires_grad() ? po.bias.grad().data() : nullptr;
      double* dv = tV.requires_grad() ? tV.grad().data() : nullptr;
      double* dctx = (in_ctx && tC.requires_grad()) ? tC.grad().data() : nullptr;
      for (int i = 0; i < labels; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double* wi = w + static_cast<size_t>(i) * (in_v + in_ctx);
        double* dwi = dw ? dw + static_cast<size_t>(i) * (in_v + in_ctx) : nullptr;
        if (db) db[i] += gi;
        for (int j = 0; j < in_v; ++j) {
          const size_t vj = static_cast<size_t>(j) * labels + i;
          if (dwi) dwi[j] += gi * v[vj];
          if (dv) dv[vj] += gi * wi[j];
        }
        for (int j = 0; j < in_ctx; ++j) {
          if (dwi) dwi[in_v + j] += gi * ctx[j];
          if (dctx) dctx[j] += gi * wi[in_v + j];
        }
      }
    });
  }
  return logits;
}

std::pair<Tensor, Tensor> output_scores(Tape& tape, const Tensor& V,
                                        const OutputParams& out) {
  Tensor logits = label_logits(tape, V, Tensor(), out);
  return {logits, sigmoid_elem(tape, logits)};
}

std::pair<Tensor, Tensor> output_scores_with_context(Tape& tape,
                                                     const Tensor& V,
                                                     const Tensor& context,
                                                     const OutputParams& out) {
  if (!context.defined())
    throw ConfigError("output_scores_with_context requires a context vector");
  Tensor logits = label_logits(tape, V, context, out);
  return {logits, sigmoid_elem(tape, logits)};
}

// ---- Forward passes --------------------------------------------------------

namespace {

// Shared front half: token lookup, embedding dropout, encoder, output dropout.
Tensor encode_document(Tape& tape, const LaatModel& model,
                       const std::vector<int>& token_ids, int valid_len,
                       bool training, Rng& rng) {
  if (token_ids.empty())
    throw EmptySequenceError("forward pass on an empty document");
  if (valid_len < 1 || valid_len > static_cast<int>(token_ids.size()))
    throw ShapeError("valid_len " + std::to_string(valid_len) +
                     " outside 1.." + std::to_string(token_ids.size()));
  const double p = model.config().dropout_p;
  Tensor embeds = lookup_columns(tape, model.embedding, token_ids);
  embeds = dropout(tape, embeds, p, training, rng);
  Tensor H = encode(tape, model, embeds, valid_len);
  return dropout(tape, H, p, training, rng);
}

std::pair<Tensor, Tensor> attend(Tape& tape, const LaatModel& model,
                                 const AttentionParams& attn, const Tensor& H,
                                 int valid_len) {
  if (model.config().attention == AttentionKind::Laat)
    return label_attention(tape, H, attn.w, attn.u, valid_len);
  return caml_attention(tape, H, attn.u, valid_len);
}

}  // namespace

ForwardTrace forward_laat(Tape& tape, const LaatModel& model,
                          const std::vector<int>& token_ids, int valid_len,
                          bool training, Rng& rng) {
  ForwardTrace trace;
  Tensor H = encode_document(tape, model, token_ids, valid_len, training, rng);
  auto [A, V] = attend(tape, model, model.attn, H, valid_len);
  auto [logits, probs] = output_scores(tape, V, model.output);
  trace.encoder_out = H;
  trace.attention = A;
  trace.label_vectors = V;
  trace.logits = logits;
  trace.probabilities = probs;
  return trace;
}

ForwardTrace forward_joint(Tape& tape, const LaatModel& model,
                           const std::vector<int>& token_ids, int valid_len,
                           bool training, Rng& rng) {
  if (!model.config().joint)
    throw ConfigError("forward_joint requires a joint head");
  ForwardTrace trace;
  trace.joint = true;
  Tensor H = encode_document(tape, model, token_ids, valid_len, training, rng);

  // Level 1: normalized codes over the shared encoder output.
  auto [A1, V1] = attend(tape, model, model.attn_l1, H, valid_len);
  auto [logits1, probs1] = output_scores(tape, V1, model.output_l1);

  // The level-1 probability vector is projected and fed to every level-2
  // classifier; probabilities (not thresholded bits) keep the path
  // differentiable.
  Tensor q = reshape(tape, probs1,
                     {model.config().joint->num_normalized_labels, 1});
  Tensor context = matmul(tape, model.projection, q);

  auto [A2, V2] = attend(tape, model, model.attn, H, valid_len);
  auto [logits2, probs2] =
      output_scores_with_context(tape, V2, context, model.output);

  trace.encoder_out = H;
  trace.attention = A2;
  trace.label_vectors = V2;
  trace.logits = logits2;
  trace.probabilities = probs2;
  trace.attention_l1 = A1;
  trace.label_vectors_l1 = V1;
  trace.logits_l1 = logits1;
  trace.probabilities_l1 = probs1;
  trace.context = context;
  return trace;
}

ForwardTrace forward_doc(Tape& tape, const LaatModel& model,
                         const ProcessedDocument& doc, bool training,
                         Rng& rng) {
  if (model.config().joint)
    return forward_joint(tape, model, doc.token_ids, doc.valid_len, training, rng);
  return forward_laat(tape, model, doc.token_ids, doc.valid_len, training, rng);
}

std::vector<uint8_t> predict(const std::vector<double>& probs,
                             double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ConfigError("threshold must lie strictly inside (0,1)");
  std::vector<uint8_t> out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold;
  return out;
}

}  // namespace laat
