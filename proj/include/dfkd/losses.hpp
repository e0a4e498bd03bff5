#pragma once

#include <utility>
#include <vector>

#include "dfkd/tape.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd {

/// Variances are floored at this value before entering any Gaussian
/// divergence, so degenerate channels stay finite.
constexpr double kVarianceFloor = 1e-8;

struct SoftmaxOut {
  Tensor probs;
  Tensor logprobs;
};

/// Row-wise temperature softmax with max subtraction.
SoftmaxOut softmax_rows(const Tensor& logits, double temperature);

/// KL(N(mean_hat, var_hat) || N(mean, var)) in nats, variances floored.
double gaussian_kl(double mean_hat, double var_hat, double mean, double var);

/// Mean over rows of KL(softmax(t/tau) || softmax(s/tau)), nats.
double kd_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                     double temperature);

/// Mean negative log-likelihood of the labels under softmax(logits), nats.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Mean over rows of the Shannon entropy of each probability row, nats.
double mean_instance_entropy(const Tensor& probs);

/// Shannon entropy of the row-averaged probability vector, nats.
double batch_entropy(const Tensor& probs);

// ---- tape-node builders ----

/// Mean over rows of KL(ref || other) from probability/log-probability nodes.
int kl_rows_mean_node(Tape& t, int probs_ref, int logprobs_ref,
                      int logprobs_other);

/// Distillation divergence with both networks on the tape (gradients flow
/// into both sides).
int kd_divergence_node(Tape& t, int teacher_logits, int student_logits,
                       double temperature);

/// Distillation divergence against a fixed teacher distribution; only the
/// student side receives gradients.
int kd_divergence_const_teacher_node(Tape& t, const Tensor& teacher_logits,
                                     int student_logits, double temperature);

int cross_entropy_node(Tape& t, int logits, const std::vector<int>& labels);

int mean_instance_entropy_node(Tape& t, int probs);

int batch_entropy_node(Tape& t, int probs);

/// Sum over layers and channels of gaussian_kl between the batch moment nodes
/// and the fixed reference moments (one (mean, var) pair per layer).
int moment_match_loss_node(Tape& t, const std::vector<int>& mean_nodes,
                           const std::vector<int>& var_nodes,
                           const std::vector<std::pair<Tensor, Tensor>>& reference);

struct AuxSwitches {
  bool moment_match = true;
  bool instance_entropy = true;
  bool batch_entropy = true;
};

struct AuxNodes {
  int total = -1;
  int moment_match = -1;      // -1 when switched off
  int instance_entropy = -1;
  int batch_entropy = -1;
};

/// Generator constraint loss: moment matching plus mean instance entropy
/// minus batch entropy of the teacher's predictions. Disabled terms are
/// omitted from the sum.
AuxNodes aux_loss_node(Tape& t, const std::vector<int>& mean_nodes,
                       const std::vector<int>& var_nodes,
                       const std::vector<std::pair<Tensor, Tensor>>& reference,
                       int teacher_probs, const AuxSwitches& sw);

struct AdversarialNodes {
  int objective = -1;        // (1/S) sum_i kd_i - alpha * aux
  std::vector<int> pair_kd;  // one node per student
};

/// Generator objective: average distillation divergence against every
/// student, penalized by alpha times the constraint loss. The generator
/// ascends this (implemented elsewhere as descent on its negation).
/// aux_total may be -1 only when alpha is 0.
AdversarialNodes adversarial_objective_node(Tape& t, int teacher_logits,
                                            const std::vector<int>& student_logits,
                                            int aux_total, double alpha,
                                            double temperature);

}  // namespace dfkd
