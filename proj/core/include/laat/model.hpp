#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "laat/data.hpp"
#include "laat/tensor.hpp"

namespace laat {

enum class EncoderKind { BiLstm, BiGru, Cnn };
enum class AttentionKind { Laat, Caml };

std::string to_string(EncoderKind k);
std::string to_string(AttentionKind k);
EncoderKind encoder_kind_from_string(const std::string& s);
AttentionKind attention_kind_from_string(const std::string& s);

// Hierarchical head: predicts the normalized-code level first and feeds a
// projection of those probabilities into the raw-code classifiers.
struct JointConfig {
  int num_normalized_labels = 0;  // |L1|
  int projection_size = 128;      // p
};

struct LaatConfig {
  int vocab_size = 0;       // |V| including PAD and UNK
  int embed_dim = 100;      // d_e
  int hidden_size = 256;    // u, per direction
  int attention_dim = 256;  // d_a
  int num_labels = 0;       // |L|
  EncoderKind encoder = EncoderKind::BiLstm;
  AttentionKind attention = AttentionKind::Laat;
  double dropout_p = 0.3;
  bool freeze_embeddings = false;
  int cnn_kernel_width = 9;  // odd
  std::optional<JointConfig> joint;

  void validate() const;  // throws ConfigError
};

// Fused gate parameters for one recurrent direction. Gate blocks are stacked
// along rows: LSTM order [input, forget, candidate, output], GRU order
// [reset, update, candidate].
struct RecurrentParams {
  Tensor w_input;  // gates*u x d_in
  Tensor w_recur;  // gates*u x u
  Tensor bias;     // gates*u
};

struct ConvParams {
  Tensor kernel;  // out_channels x (d_in * width), row-major per channel
  Tensor bias;    // out_channels
};

struct AttentionParams {
  Tensor w;  // d_a x 2u   (unused by CAML attention)
  Tensor u;  // L x d_a    (CAML: L x 2u)
};

struct OutputParams {
  Tensor weight;  // L x in_dim
  Tensor bias;    // L
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// All trainable parameters of LAAT / JointLAAT and the ablation variants.
class LaatModel {
 public:
  LaatModel(const LaatConfig& config, Rng& rng);

  const LaatConfig& config() const { return config_; }

  // Replace the (randomly initialized) embedding matrix with pretrained rows.
  void set_embedding_matrix(const Tensor& matrix);

  // Stable registry: name -> tensor, in a fixed documented order.
  std::vector<NamedParam> parameters();
  std::vector<NamedParam> parameters() const;

  int64_t parameter_count() const;
  static int64_t expected_parameter_count(const LaatConfig& config);

  void zero_grad();

  // Deep copy (snapshots for best-checkpoint tracking).
  LaatModel clone() const;

  Tensor embedding;  // |V| x d_e

  RecurrentParams forward_cell;   // recurrent encoders
  RecurrentParams backward_cell;
  ConvParams conv;                // CNN encoder

  AttentionParams attn;   // level-2 (or only) attention
  OutputParams output;    // level-2 (or only) classifiers

  // Joint-only members.
  AttentionParams attn_l1;
  OutputParams output_l1;
  Tensor projection;  // p x |L1|

 private:
  explicit LaatModel(const LaatConfig& config) : config_(config) {}
  LaatConfig config_;
};

// ---- Cell-level steps -------------------------------------------------------

// One LSTM step: gates i,f,o = sigmoid, candidate g = tanh;
// c = f*c_prev + i*g; h = o*tanh(c).
std::pair<std::vector<double>, std::vector<double>> lstm_cell_step(
    const RecurrentParams& params, const std::vector<double>& x,
    const std::vector<double>& h_prev, const std::vector<double>& c_prev);

// One GRU step (candidate uses the reset-gated previous state):
// r,z = sigmoid; n = tanh(Wn x + Un (r*h_prev) + bn); h = (1-z)*n + z*h_prev.
std::vector<double> gru_cell_step(const RecurrentParams& params,
                                  const std::vector<double>& x,
                                  const std::vector<double>& h_prev);

// ---- Encoder ---------------------------------------------------------------

// Bidirectional encoding of an embedded document (d_in x n) into H (2u x n).
// Positions beyond valid_len come out exactly zero. Dispatches on
// config.encoder; recurrent variants run the whole sequence as one fused
// tape op with hand-rolled backpropagation through time.
Tensor encode(Tape& tape, const LaatModel& model, const Tensor& embeds,
              int valid_len);

Tensor bilstm_encode(Tape& tape, const Tensor& embeds,
                     const RecurrentParams& fw, const RecurrentParams& bw,
                     int hidden_size, int valid_len);
Tensor bigru_encode(Tape& tape, const Tensor& embeds,
                    const RecurrentParams& fw, const RecurrentParams& bw,
                    int hidden_size, int valid_len);
Tensor cnn_encode(Tape& tape, const Tensor& embeds, const ConvParams& conv,
                  int valid_len);

// ---- Attention and output ---------------------------------------------------

// Label attention: Z = tanh(W H), A = row-softmax(U Z) masked to valid_len,
// V = H A^T. Every column of V is a convex combination of valid H columns.
std::pair<Tensor, Tensor> label_attention(Tape& tape, const Tensor& H,
                                          const Tensor& W, const Tensor& U,
                                          int valid_len);

// Attention logits taken directly from the encoder output (no tanh
// projection): A = row-softmax(U_caml H), V = H A^T.
std::pair<Tensor, Tensor> caml_attention(Tape& tape, const Tensor& H,
                                         const Tensor& u_caml, int valid_len);

// Per-label linear scores: logit_i = w_i . v_i + b_i, prob = sigmoid(logit).
// No weight sharing across labels.
std::pair<Tensor, Tensor> output_scores(Tape& tape, const Tensor& V,
                                        const OutputParams& out);

// Joint variant: logit_i = w_i . (v_i concat context) + b_i where weight has
// in_dim = 2u + p and context is the projected level-1 prediction.
std::pair<Tensor, Tensor> output_scores_with_context(Tape& tape,
                                                     const Tensor& V,
                                                     const Tensor& context,
                                                     const OutputParams& out);

// ---- Forward passes ----------------------------------------------------------

struct ForwardTrace {
  Tensor encoder_out;    // H as consumed by attention (2u x n)
  Tensor attention;      // A (L x n)
  Tensor label_vectors;  // V (2u x L)
  Tensor logits;         // L
  Tensor probabilities;  // L

  bool joint = false;
  Tensor attention_l1;      // |L1| x n
  Tensor label_vectors_l1;  // 2u x |L1|
  Tensor logits_l1;         // |L1|
  Tensor probabilities_l1;  // |L1|
  Tensor context;           // s_D (p x 1)
};

ForwardTrace forward_laat(Tape& tape, const LaatModel& model,
                          const std::vector<int>& token_ids, int valid_len,
                          bool training, Rng& rng);

ForwardTrace forward_joint(Tape& tape, const LaatModel& model,
                           const std::vector<int>& token_ids, int valid_len,
                           bool training, Rng& rng);

// Dispatches to forward_joint when the model has a joint head.
ForwardTrace forward_doc(Tape& tape, const LaatModel& model,
                         const ProcessedDocument& doc, bool training,
                         Rng& rng);

// y_i = 1 iff prob_i >= threshold (ties count as positive).
std::vector<uint8_t> predict(const std::vector<double>& probs,
                             double threshold);

}  // namespace laat
