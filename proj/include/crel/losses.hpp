#pragma once

// Loss terms for new-task training and memory replay.
//
// Every function here takes its trainable inputs as tape variables and its
// targets (labels, prototypes, distillation targets) as constants, so the
// returned scalar can be differentiated and checked by finite differences.

#include <vector>

#include "crel/autodiff.hpp"
#include "crel/tensor.hpp"

namespace crel {

/// Mean negative log-likelihood of `labels` under softmax(logits). Labels are column indices.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

/// InfoNCE against the prototype rows: -mean log softmax(z . Z^T / tau)[y].
Var info_nce(const Var& z, const Matrix& prototypes, const std::vector<int>& labels, double tau);

/// Hardest-negative column per sample: argmax over r != y of z . z_r (lowest index on ties).
std::vector<int> hardest_negatives(const Matrix& z, const Matrix& prototypes, const std::vector<int>& labels);

/// mean max(omega - z.z_y + z.z_{y'}, 0) with y' the hardest negative. Zero when only one prototype exists.
Var triplet_margin(const Var& z, const Matrix& prototypes, const std::vector<int>& labels, double omega);

/// InfoNCE + mu * triplet.
Var contrastive_loss(const Var& z, const Matrix& prototypes, const std::vector<int>& labels, double tau, double mu,
                     double omega);

struct FocalWeights {
  Matrix similarity_softmax;  ///< s: B x |previous relations|, rows sum to 1
  Matrix weights;             ///< w = s * (1 - P(y|x))^gamma
};

/// s_{x,r} = softmax_r(cos(h_x, p_r) / tau2) over the previous relations' prototypes,
/// w_{x,r} = s_{x,r} (1 - p_true_x)^gamma. Throws std::invalid_argument when there are no previous relations.
FocalWeights focal_weights(const Matrix& h, const Matrix& previous_prototypes, const Vector& p_true, double tau2,
                           double gamma);

/// a = w * P(r | x; previous model), elementwise.
Matrix distillation_targets(const Matrix& weights, const Matrix& teacher_probs);

/// -(1/B) sum_i sum_{j < a.cols()} a_ij log P(r_j | x_i), where log_probs covers all current relations
/// and its first a.cols() columns are the previous relations.
Var focal_distillation(const Var& log_probs, const Matrix& targets);

}  // namespace crel
