#pragma once

#include "medts/autograd/nn.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace medts::encoder {

enum class CovariateStrategy { concatenate, average_weighted, average_unweighted, interleave, independent };

inline std::string to_string(CovariateStrategy s) {
  switch (s) {
    case CovariateStrategy::concatenate: return "concatenate";
    case CovariateStrategy::average_weighted: return "average_weighted";
    case CovariateStrategy::average_unweighted: return "average_unweighted";
    case CovariateStrategy::interleave: return "interleave";
    case CovariateStrategy::independent: return "independent";
  }
  return "?";
}

inline CovariateStrategy parse_strategy(const std::string& s) {
  if (s == "concatenate") return CovariateStrategy::concatenate;
  if (s == "average_weighted" || s == "average") return CovariateStrategy::average_weighted;
  if (s == "average_unweighted") return CovariateStrategy::average_unweighted;
  if (s == "interleave") return CovariateStrategy::interleave;
  if (s == "independent") return CovariateStrategy::independent;
  throw std::invalid_argument("unknown covariate strategy: " + s);
}

inline const std::vector<CovariateStrategy>& all_strategies() {
  static const std::vector<CovariateStrategy> v{CovariateStrategy::concatenate, CovariateStrategy::interleave,
                                                CovariateStrategy::average_weighted,
                                                CovariateStrategy::average_unweighted, CovariateStrategy::independent};
  return v;
}

/// Input width the reprogrammer sees under a strategy.
inline Index reprogrammer_input_width(CovariateStrategy s, Index d_patch, Index n_cov) {
  return s == CovariateStrategy::concatenate ? d_patch * n_cov : d_patch;
}

/// Simplex weights kept valid by a softmax over free logits.
class CovariateWeights {
 public:
  CovariateWeights() = default;
  CovariateWeights(ag::ParameterStore& store, Index n_cov)
      : logits_(&store.add("covariate.logits", Matrix::Zero(1, n_cov))) {}
  static CovariateWeights bind(ag::ParameterStore& store) {
    CovariateWeights w;
    w.logits_ = &store.at("covariate.logits");
    return w;
  }

  ag::Var operator()(ag::Tape& t) const { return ag::softmax_rows(t.param(*logits_)); }

  Matrix weights() const {
    Matrix w = (logits_->value.array() - logits_->value.maxCoeff()).exp();
    return w / w.sum();
  }
  ag::Parameter& logits() const { return *logits_; }

 private:
  ag::Parameter* logits_ = nullptr;
};

/// Sequences handed to the backbone; `average_outputs` marks the independent strategy.
struct FusedSequences {
  std::vector<ag::Var> sequences;
  bool average_outputs = false;
  Index n_patch_positions() const { return sequences.empty() ? 0 : sequences.front().rows(); }
};

inline void check_common_patch_count(const std::vector<ag::Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("no covariate embeddings");
  for (const auto& x : xs) {
    if (x.rows() != xs.front().rows()) throw std::invalid_argument("mismatched patch counts across covariates");
    if (x.cols() != xs.front().cols()) throw std::invalid_argument("mismatched embedding widths across covariates");
  }
}

/// Channel-wise concatenation applied before reprogramming.
inline ag::Var concatenate_covariates(const std::vector<ag::Var>& per_covariate) {
  check_common_patch_count(per_covariate);
  return per_covariate.size() == 1 ? per_covariate.front() : ag::concat_cols(per_covariate);
}

/// Fusion of already-aligned embeddings for the post-reprogramming strategies.
/// `weights` is only read by average_weighted.
inline FusedSequences fuse_covariates(const std::vector<ag::Var>& aligned, CovariateStrategy strategy,
                                      const ag::Var* weights = nullptr) {
  check_common_patch_count(aligned);
  FusedSequences out;
  ag::Tape& t = *aligned.front().tape();
  switch (strategy) {
    case CovariateStrategy::concatenate:
      if (aligned.size() != 1) throw std::invalid_argument("concatenate fuses before reprogramming");
      out.sequences = aligned;
      break;
    case CovariateStrategy::average_weighted:
      if (!weights) throw std::invalid_argument("average_weighted requires weights");
      out.sequences = {ag::weighted_sum(aligned, *weights)};
      break;
    case CovariateStrategy::average_unweighted: {
      Matrix w = Matrix::Constant(1, static_cast<Index>(aligned.size()), 1.0 / static_cast<double>(aligned.size()));
      out.sequences = {ag::weighted_sum(aligned, t.constant(std::move(w)))};
      break;
    }
    case CovariateStrategy::interleave:
      out.sequences = {ag::interleave_rows(aligned)};
      break;
    case CovariateStrategy::independent:
      out.sequences = aligned;
      out.average_outputs = true;
      break;
  }
  return out;
}

}  // namespace medts::encoder
