#pragma once

// Patch reprogramming: multi-head cross-attention from patch embeddings
// (queries) onto a bank of text prototypes (keys/values). The prototypes are a
// learned linear reduction of the frozen token-embedding table, so every
// head output is a convex combination of value-projected prototypes.

#include "medts/autograd/nn.hpp"

#include <cmath>
#include <vector>

namespace medts::encoder {

struct ReprogrammerConfig {
  Index d_in = 32;      // query input width (d_patch, or d_patch * C for concatenate)
  Index d_model = 16;   // backbone embedding width
  Index vocab = 256;    // rows of the token-embedding table
  Index n_proto = 32;
  Index n_heads = 4;
  Index d_head = 8;
};

/// Per-head internals of one attend() call, kept for inspection.
struct ReprogramTrace {
  std::vector<Matrix> attention;     // N x n_proto per head
  std::vector<Matrix> values;        // n_proto x d_head per head
  std::vector<Matrix> head_outputs;  // N x d_head per head, before the output projection
};

class Reprogrammer {
 public:
  Reprogrammer() = default;

  Reprogrammer(ag::ParameterStore& store, const ReprogrammerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.n_proto < 1) throw std::invalid_argument("prototype bank must hold at least one prototype");
    if (cfg.n_heads < 1 || cfg.d_head < 1) throw std::invalid_argument("invalid head configuration");
    reduce_ = ag::Linear::create(store, "reprogram.reduce", cfg.vocab, cfg.n_proto, rng);
    query_ = ag::Linear::create(store, "reprogram.query", cfg.d_in, cfg.n_heads * cfg.d_head, rng);
    key_ = ag::Linear::create(store, "reprogram.key", cfg.d_model, cfg.n_heads * cfg.d_head, rng);
    value_ = ag::Linear::create(store, "reprogram.value", cfg.d_model, cfg.n_heads * cfg.d_head, rng);
    out_ = ag::Linear::create(store, "reprogram.out", cfg.n_heads * cfg.d_head, cfg.d_model, rng);
  }

  static Reprogrammer bind(ag::ParameterStore& store, const ReprogrammerConfig& cfg) {
    Reprogrammer r;
    r.cfg_ = cfg;
    r.reduce_ = ag::Linear::bind(store, "reprogram.reduce");
    r.query_ = ag::Linear::bind(store, "reprogram.query");
    r.key_ = ag::Linear::bind(store, "reprogram.key");
    r.value_ = ag::Linear::bind(store, "reprogram.value");
    r.out_ = ag::Linear::bind(store, "reprogram.out");
    return r;
  }

  const ReprogrammerConfig& config() const { return cfg_; }

  /// n_proto x d_model prototype bank from the transposed embedding table (d_model x vocab).
  ag::Var prototypes(ag::Tape& t, const Matrix& embedding_table_t) const {
    if (embedding_table_t.cols() != cfg_.vocab || embedding_table_t.rows() != cfg_.d_model) {
      throw std::invalid_argument("embedding table does not match reprogrammer vocabulary");
    }
    ag::Var reduced_t = reduce_(t, t.constant_ref(embedding_table_t));  // d_model x n_proto
    return ag::transpose(reduced_t);
  }

  /// N x d_in patch embeddings -> N x d_model aligned embeddings.
  ag::Var attend(ag::Tape& t, const ag::Var& patches, const ag::Var& protos, ReprogramTrace* trace = nullptr) const {
    if (patches.cols() != cfg_.d_in) throw std::invalid_argument("patch embedding width does not match reprogrammer");
    if (!patches.value().allFinite()) throw std::invalid_argument("non-finite patch embeddings");
    ag::Var q = query_(t, patches);
    ag::Var k = key_(t, protos);
    ag::Var v = value_(t, protos);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.d_head));
    std::vector<ag::Var> heads;
    for (Index h = 0; h < cfg_.n_heads; ++h) {
      ag::Var qh = ag::slice_cols(q, h * cfg_.d_head, cfg_.d_head);
      ag::Var kh = ag::slice_cols(k, h * cfg_.d_head, cfg_.d_head);
      ag::Var vh = ag::slice_cols(v, h * cfg_.d_head, cfg_.d_head);
      ag::Var att = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
      ag::Var oh = ag::matmul(att, vh);
      if (trace) {
        trace->attention.push_back(att.value());
        trace->values.push_back(vh.value());
        trace->head_outputs.push_back(oh.value());
      }
      heads.push_back(oh);
    }
    return out_(t, heads.size() == 1 ? heads.front() : ag::concat_cols(heads));
  }

 private:
  ReprogrammerConfig cfg_;
  ag::Linear reduce_, query_, key_, value_, out_;
};

}  // namespace medts::encoder
