#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"

namespace cotsteer::lm {

// Decoder-only transformer: pre-norm blocks, learned position embeddings,
// GELU feed-forward at 4x width, untied output matrix, d_head = d_model / H.
struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int max_seq_len = 192;
  int vocab_size = 0;
  uint64_t seed = 0;

  int d_head() const { return d_model / n_heads; }
  int d_ff() const { return 4 * d_model; }

  void validate() const {
    if (n_layers <= 0) fail(Errc::config_invalid, "n_layers must be positive");
    if (n_heads <= 0) fail(Errc::config_invalid, "n_heads must be positive");
    if (d_model <= 0 || d_model % n_heads != 0)
      fail(Errc::config_invalid, "d_model must be a positive multiple of n_heads");
    if (max_seq_len <= 0) fail(Errc::config_invalid, "max_seq_len must be positive");
    if (vocab_size <= 0) fail(Errc::config_invalid, "vocab_size must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TokenSeq {
  std::vector<int> ids;
};

}  // namespace cotsteer::lm
