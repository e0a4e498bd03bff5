#include "dfkd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dfkd {

namespace {

void require_rows_match(const Tensor& logits, std::size_t n, const char* where) {
  if (logits.rank() != 2)
    throw std::invalid_argument(std::string(where) + ": need rank-2 logits, got " +
                                logits.shape_str());
  if (logits.dim(0) != n)
    throw std::invalid_argument(std::string(where) + ": " +
                                std::to_string(logits.dim(0)) + " rows vs " +
                                std::to_string(n) + " labels");
}

void require_labels(const std::vector<int>& labels, std::size_t k,
                    const char* where) {
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= k)
      throw std::invalid_argument(std::string(where) + ": label " +
                                  std::to_string(y) + " out of range [0, " +
                                  std::to_string(k) + ")");
}

void require_probability_rows(const Tensor& probs, const char* where) {
  if (probs.rank() != 2)
    throw std::invalid_argument(std::string(where) + ": need rank-2 input, got " +
                                probs.shape_str());
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (probs.at2(i, j) < 0.0f)
        throw std::invalid_argument(std::string(where) + ": negative entry in row " +
                                    std::to_string(i));
      s += double(probs.at2(i, j));
    }
    if (std::abs(s - 1.0) > 1e-5)
      throw std::invalid_argument(std::string(where) + ": row " +
                                  std::to_string(i) + " sums to " +
                                  std::to_string(s) + ", expected 1");
  }
}

}  // namespace

SoftmaxOut softmax_rows(const Tensor& logits, double temperature) {
  if (temperature <= 0)
    throw std::invalid_argument("softmax: temperature must be > 0");
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax: need rank-2 logits, got " +
                                logits.shape_str());
  if (!logits.all_finite())
    throw std::invalid_argument("softmax: non-finite input logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  SoftmaxOut out{Tensor({n, k}), Tensor({n, k})};
  for (std::size_t i = 0; i < n; ++i) {
    double mx = double(logits.at2(i, 0)) / temperature;
    for (std::size_t j = 1; j < k; ++j)
      mx = std::max(mx, double(logits.at2(i, j)) / temperature);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j)
      z += std::exp(double(logits.at2(i, j)) / temperature - mx);
    const double lz = std::log(z);
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = double(logits.at2(i, j)) / temperature - mx - lz;
      out.logprobs.at2(i, j) = float(lp);
      out.probs.at2(i, j) = float(std::exp(lp));
    }
  }
  return out;
}

double gaussian_kl(double mean_hat, double var_hat, double mean, double var) {
  if (!std::isfinite(mean_hat) || !std::isfinite(var_hat) ||
      !std::isfinite(mean) || !std::isfinite(var))
    throw std::invalid_argument("gaussian_kl: non-finite argument");
  if (var_hat < 0 || var < 0)
    throw std::invalid_argument("gaussian_kl: negative variance");
  const double vh = std::max(var_hat, kVarianceFloor);
  const double v = std::max(var, kVarianceFloor);
  const double d = mean_hat - mean;
  return (d * d + vh) / (2.0 * v) - 0.5 * std::log(vh / v) - 0.5;
}

double kd_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                     double temperature) {
  require_same_shape(teacher_logits, student_logits, "kd_divergence");
  const SoftmaxOut t = softmax_rows(teacher_logits, temperature);
  const SoftmaxOut s = softmax_rows(student_logits, temperature);
  const std::size_t n = teacher_logits.dim(0), k = teacher_logits.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      total += double(t.probs.at2(i, j)) *
               (double(t.logprobs.at2(i, j)) - double(s.logprobs.at2(i, j)));
  return total / double(n);
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rows_match(logits, labels.size(), "cross_entropy");
  require_labels(labels, logits.dim(1), "cross_entropy");
  const SoftmaxOut s = softmax_rows(logits, 1.0);
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total -= double(s.logprobs.at2(i, std::size_t(labels[i])));
  return total / double(labels.size());
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  require_rows_match(logits, labels.size(), "accuracy");
  require_labels(labels, logits.dim(1), "accuracy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at2(i, j) > logits.at2(i, best)) best = j;
    if (best == std::size_t(labels[i])) ++hits;
  }
  return double(hits) / double(n);
}

double mean_instance_entropy(const Tensor& probs) {
  require_probability_rows(probs, "mean_instance_entropy");
  double total = 0;
  for (float p : probs.data)
    if (p > 0.0f) total -= double(p) * std::log(double(p));
  return total / double(probs.dim(0));
}

double batch_entropy(const Tensor& probs) {
  require_probability_rows(probs, "batch_entropy");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  double h = 0;
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += double(probs.at2(i, j));
    m /= double(n);
    if (m > 0) h -= m * std::log(m);
  }
  return h;
}

int kl_rows_mean_node(Tape& t, int probs_ref, int logprobs_ref,
                      int logprobs_other) {
  const int diff = t.sub(logprobs_ref, logprobs_other);
  const int weighted = t.mul(probs_ref, diff);
  return t.mean_all(t.row_sum(weighted));
}

int kd_divergence_node(Tape& t, int teacher_logits, int student_logits,
                       double temperature) {
  auto [tp, tlp] = t.softmax_logs(teacher_logits, temperature);
  auto [sp, slp] = t.softmax_logs(student_logits, temperature);
  (void)sp;
  return kl_rows_mean_node(t, tp, tlp, slp);
}

int kd_divergence_const_teacher_node(Tape& t, const Tensor& teacher_logits,
                                     int student_logits, double temperature) {
  const SoftmaxOut ref = softmax_rows(teacher_logits, temperature);
  const int tp = t.input(ref.probs);
  const int tlp = t.input(ref.logprobs);
  auto [sp, slp] = t.softmax_logs(student_logits, temperature);
  (void)sp;
  return kl_rows_mean_node(t, tp, tlp, slp);
}

int cross_entropy_node(Tape& t, int logits, const std::vector<int>& labels) {
  const Tensor& lv = t.value(logits);
  require_rows_match(lv, labels.size(), "cross_entropy");
  require_labels(labels, lv.dim(1), "cross_entropy");
  Tensor mask({lv.dim(0), lv.dim(1)});
  for (std::size_t i = 0; i < labels.size(); ++i)
    mask.at2(i, std::size_t(labels[i])) = 1.0f;
  auto [p, lp] = t.softmax_logs(logits, 1.0);
  (void)p;
  const int picked = t.mul(lp, t.input(std::move(mask)));
  return t.mul_scalar(t.mean_all(t.row_sum(picked)), -1.0);
}

int mean_instance_entropy_node(Tape& t, int probs) {
  require_probability_rows(t.value(probs), "mean_instance_entropy");
  const int xl = t.xlogx(probs);
  return t.mul_scalar(t.mean_all(t.row_sum(xl)), -1.0);
}

int batch_entropy_node(Tape& t, int probs) {
  require_probability_rows(t.value(probs), "batch_entropy");
  const int pbar = t.col_mean(probs);
  return t.mul_scalar(t.sum_all(t.xlogx(pbar)), -1.0);
}

int moment_match_loss_node(Tape& t, const std::vector<int>& mean_nodes,
                           const std::vector<int>& var_nodes,
                           const std::vector<std::pair<Tensor, Tensor>>& reference) {
  if (mean_nodes.size() != var_nodes.size() ||
      mean_nodes.size() != reference.size())
    throw std::invalid_argument(
        "moment_match_loss: got " + std::to_string(mean_nodes.size()) +
        " mean nodes, " + std::to_string(var_nodes.size()) + " var nodes, " +
        std::to_string(reference.size()) + " reference pairs");
  if (mean_nodes.empty())
    throw std::invalid_argument(
        "moment_match_loss: no normalization layers to match");
  int total = -1;
  for (std::size_t l = 0; l < mean_nodes.size(); ++l) {
    const Tensor& ref_mean = reference[l].first;
    const Tensor& ref_var = reference[l].second;
    require_same_shape(t.value(mean_nodes[l]), ref_mean, "moment_match_loss");
    const std::size_t c = ref_mean.size();
    Tensor inv2v({c}), offset({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = std::max(double(ref_var[ch]), kVarianceFloor);
      inv2v[ch] = float(1.0 / (2.0 * v));
      offset[ch] = float(0.5 * std::log(v) - 0.5);
    }
    const int vh = t.clamp_min(var_nodes[l], kVarianceFloor);
    const int dmu = t.sub(mean_nodes[l], t.input(ref_mean));
    const int quad = t.mul(t.add(t.square(dmu), vh), t.input(std::move(inv2v)));
    const int logv = t.mul_scalar(t.log_(vh), -0.5);
    const int kl = t.add(t.add(quad, logv), t.input(std::move(offset)));
    const int layer_sum = t.sum_all(kl);
    total = total < 0 ? layer_sum : t.add(total, layer_sum);
  }
  return total;
}

AuxNodes aux_loss_node(Tape& t, const std::vector<int>& mean_nodes,
                       const std::vector<int>& var_nodes,
                       const std::vector<std::pair<Tensor, Tensor>>& reference,
                       int teacher_probs, const AuxSwitches& sw) {
  AuxNodes out;
  if (!sw.moment_match && !sw.instance_entropy && !sw.batch_entropy)
    throw std::invalid_argument("aux_loss: every term is switched off");
  if (sw.moment_match) {
    out.moment_match = moment_match_loss_node(t, mean_nodes, var_nodes, reference);
    out.total = out.moment_match;
  }
  if (sw.instance_entropy) {
    out.instance_entropy = mean_instance_entropy_node(t, teacher_probs);
    out.total = out.total < 0 ? out.instance_entropy
                              : t.add(out.total, out.instance_entropy);
  }
  if (sw.batch_entropy) {
    out.batch_entropy = batch_entropy_node(t, teacher_probs);
    out.total = out.total < 0
                    ? t.mul_scalar(out.batch_entropy, -1.0)
                    : t.sub(out.total, out.batch_entropy);
  }
  return out;
}

AdversarialNodes adversarial_objective_node(Tape& t, int teacher_logits,
                                            const std::vector<int>& student_logits,
                                            int aux_total, double alpha,
                                            double temperature) {
  if (student_logits.empty())
    throw std::invalid_argument("adversarial_objective: no students");
  if (alpha < 0)
    throw std::invalid_argument("adversarial_objective: alpha must be >= 0");
  if (alpha > 0 && aux_total < 0)
    throw std::invalid_argument(
        "adversarial_objective: alpha > 0 requires a constraint loss node");
  AdversarialNodes out;
  auto [tp, tlp] = t.softmax_logs(teacher_logits, temperature);
  int sum = -1;
  for (int logits : student_logits) {
    auto [sp, slp] = t.softmax_logs(logits, temperature);
    (void)sp;
    const int kd = kl_rows_mean_node(t, tp, tlp, slp);
    out.pair_kd.push_back(kd);
    sum = sum < 0 ? kd : t.add(sum, kd);
  }
  out.objective = t.mul_scalar(sum, 1.0 / double(student_logits.size()));
  if (alpha > 0)
    out.objective = t.sub(out.objective, t.mul_scalar(aux_total, alpha));
  return out;
}

}  // namespace dfkd
