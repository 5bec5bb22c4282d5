#pragma once

// Internal JSON (de)serialization helpers shared by checkpoint and run code.

#include <nlohmann/json.hpp>

#include "laat/errors.hpp"
#include "laat/model.hpp"
#include "laat/train.hpp"

namespace laat {

inline nlohmann::json laat_config_to_json(const LaatConfig& c) {
  nlohmann::json j{{"vocab_size", c.vocab_size},
                   {"embed_dim", c.embed_dim},
                   {"hidden_size", c.hidden_size},
                   {"attention_dim", c.attention_dim},
                   {"num_labels", c.num_labels},
                   {"encoder", to_string(c.encoder)},
                   {"attention", to_string(c.attention)},
                   {"dropout_p", c.dropout_p},
                   {"freeze_embeddings", c.freeze_embeddings},
                   {"cnn_kernel_width", c.cnn_kernel_width}};
  if (c.joint)
    j["joint"] = {{"num_normalized_labels", c.joint->num_normalized_labels},
                  {"projection_size", c.joint->projection_size}};
  return j;
}

inline LaatConfig laat_config_from_json(const nlohmann::json& j) {
  LaatConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.num_labels = j.value("num_labels", c.num_labels);
  if (j.contains("encoder"))
    c.encoder = encoder_kind_from_string(j["encoder"].get<std::string>());
  if (j.contains("attention"))
    c.attention = attention_kind_from_string(j["attention"].get<std::string>());
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.freeze_embeddings = j.value("freeze_embeddings", c.freeze_embeddings);
  c.cnn_kernel_width = j.value("cnn_kernel_width", c.cnn_kernel_width);
  if (j.contains("joint") && !j["joint"].is_null()) {
    JointConfig jc;
    jc.num_normalized_labels =
        j["joint"].value("num_normalized_labels", jc.num_normalized_labels);
    jc.projection_size = j["joint"].value("projection_size", jc.projection_size);
    c.joint = jc;
  }
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return nlohmann::json{{"lr", t.lr},
                        {"batch_size", t.batch_size},
                        {"max_epochs", t.max_epochs},
                        {"scheduler_patience", t.scheduler_patience},
                        {"scheduler_factor", t.scheduler_factor},
                        {"early_stop_patience", t.early_stop_patience},
                        {"threshold", t.threshold},
                        {"seed", t.seed},
                        {"weight_decay", t.adamw.weight_decay},
                        {"beta1", t.adamw.beta1},
                        {"beta2", t.adamw.beta2},
                        {"epsilon", t.adamw.epsilon}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.lr = j.value("lr", t.lr);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.scheduler_patience = j.value("scheduler_patience", t.scheduler_patience);
  t.scheduler_factor = j.value("scheduler_factor", t.scheduler_factor);
  t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
  t.threshold = j.value("threshold", t.threshold);
  t.seed = j.value("seed", t.seed);
  t.adamw.weight_decay = j.value("weight_decay", t.adamw.weight_decay);
  t.adamw.beta1 = j.value("beta1", t.adamw.beta1);
  t.adamw.beta2 = j.value("beta2", t.adamw.beta2);
  t.adamw.epsilon = j.value("epsilon", t.adamw.epsilon);
  return t;
}

}  // namespace laat
