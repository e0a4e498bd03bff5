#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dfkd/losses.hpp"
#include "dfkd/rng.hpp"
#include "dfkd/tape.hpp"
#include "testutil.hpp"

using namespace dfkd;

namespace {

Tensor one_hot_rows(const std::vector<int>& labels, std::size_t k) {
  Tensor t({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i)
    t.at2(i, std::size_t(labels[i])) = 1.0f;
  return t;
}

Tensor uniform_rows(std::size_t n, std::size_t k) {
  return Tensor::full({n, k}, float(1.0 / double(k)));
}

}  // namespace

TEST_CASE("gaussian_kl fixed hand-evaluated cases") {
  const double ln2 = std::log(2.0);
  struct Case {
    double mh, vh, m, v, want;
  };
  const Case cases[] = {
      {0, 1, 0, 1, 0.0},
      {1, 1, 0, 1, 0.5},
      {0, 4, 0, 1, 1.5 - ln2},
      {2, 1, 0, 2, 0.75 + 0.5 * ln2},
      {-1, 0.25, 1, 0.5, 3.75 + 0.5 * ln2},
  };
  for (const auto& c : cases)
    CHECK(std::abs(gaussian_kl(c.mh, c.vh, c.m, c.v) - c.want) < 1e-10);
}

TEST_CASE("gaussian_kl is non-negative over random instances") {
  Rng rng(21);
  for (int i = 0; i < 10000; ++i) {
    const double v = gaussian_kl(rng.uniform(-5, 5), rng.uniform(0, 9),
                                 rng.uniform(-5, 5), rng.uniform(0, 9));
    CHECK(v >= -1e-12);
  }
}

TEST_CASE("gaussian_kl ignores simultaneous affine rescaling") {
  Rng rng(22);
  for (int i = 0; i < 1000; ++i) {
    const double mh = rng.uniform(-3, 3), m = rng.uniform(-3, 3);
    const double vh = rng.uniform(0.05, 4), v = rng.uniform(0.05, 4);
    const double a = rng.uniform(0.1, 3), b = rng.uniform(-2, 2);
    const double base = gaussian_kl(mh, vh, m, v);
    const double scaled = gaussian_kl(a * mh + b, a * a * vh, a * m + b, a * a * v);
    CHECK(std::abs(base - scaled) < 1e-10);
  }
}

TEST_CASE("gaussian_kl rejects invalid arguments") {
  CHECK_THROWS_AS(gaussian_kl(0, -1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_kl(std::nan(""), 1, 0, 1), std::invalid_argument);
}

TEST_CASE("distillation divergence matches hand arithmetic") {
  Tensor t_logits({1, 2}, {float(std::log(3.0)), 0.0f});
  Tensor s_logits({1, 2}, {0.0f, 0.0f});
  const double want =
      0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  CHECK(kd_divergence(t_logits, s_logits, 1.0) ==
        doctest::Approx(want).epsilon(1e-5));

  // Identical distributions diverge by zero at any temperature.
  Rng rng(23);
  Tensor x({4, 6});
  rng.fill_normal(x, 0, 2);
  CHECK(kd_divergence(x, x, 1.0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(kd_divergence(x, x, 3.0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("distillation divergence averages over the batch") {
  Tensor t_logits({2, 2}, {float(std::log(3.0)), 0.0f, 0.0f, 0.0f});
  Tensor s_logits({2, 2});
  const double row0 =
      0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  CHECK(kd_divergence(t_logits, s_logits, 1.0) ==
        doctest::Approx(row0 / 2.0).epsilon(1e-5));
}

TEST_CASE("distillation divergence is non-negative over random pairs") {
  Rng rng(24);
  for (int i = 0; i < 10000; ++i) {
    Tensor a({2, 5}), b({2, 5});
    rng.fill_normal(a, 0, 3);
    rng.fill_normal(b, 0, 3);
    CHECK(kd_divergence(a, b, rng.uniform(0.5, 4)) >= -1e-7);
  }
}

TEST_CASE("cross entropy fixed points") {
  Tensor uniform({3, 10});
  const std::vector<int> labels = {0, 5, 9};
  CHECK(cross_entropy(uniform, labels) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));

  Tensor peaked({2, 4});
  peaked.at2(0, 1) = 50.0f;
  peaked.at2(1, 3) = 50.0f;
  CHECK(cross_entropy(peaked, {1, 3}) < 1e-6);

  Rng rng(25);
  Tensor x({4, 5});
  rng.fill_normal(x, 0, 2);
  std::vector<int> y = {0, 2, 4, 1};
  const double base = cross_entropy(x, y);
  Tensor xp({4, 5});
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<int> yp(4);
  for (std::size_t i = 0; i < 4; ++i) {
    yp[i] = y[perm[i]];
    for (std::size_t j = 0; j < 5; ++j) xp.at2(i, j) = x.at2(perm[i], j);
  }
  CHECK(cross_entropy(xp, yp) == doctest::Approx(base).epsilon(1e-6));

  CHECK_THROWS_AS(cross_entropy(x, {0, 1, 2, 7}), std::invalid_argument);
}

TEST_CASE("entropy fixed points and bounds") {
  CHECK(mean_instance_entropy(one_hot_rows({0, 1, 2}, 4)) ==
        doctest::Approx(0.0));
  CHECK(mean_instance_entropy(uniform_rows(3, 10)) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));
  CHECK(mean_instance_entropy(Tensor({1, 2}, {0.5f, 0.5f})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  CHECK(batch_entropy(one_hot_rows({0, 1, 2, 3}, 4)) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));
  CHECK(batch_entropy(one_hot_rows({2, 2, 2}, 4)) == doctest::Approx(0.0));

  Rng rng(26);
  for (int i = 0; i < 10000; ++i) {
    Tensor logits({3, 6});
    rng.fill_normal(logits, 0, 3);
    const Tensor probs = softmax_rows(logits, 1.0).probs;
    const double inst = mean_instance_entropy(probs);
    const double batch = batch_entropy(probs);
    CHECK(inst >= -1e-9);
    CHECK(batch >= -1e-9);
    CHECK(inst <= std::log(6.0) + 1e-6);
    CHECK(batch <= std::log(6.0) + 1e-6);
    CHECK(batch >= inst - 1e-6);  // concavity of entropy
  }
}

TEST_CASE("entropies reject malformed probability rows") {
  Tensor bad({1, 3}, {0.5f, 0.2f, 0.2f});
  CHECK_THROWS_AS(mean_instance_entropy(bad), std::invalid_argument);
  CHECK_THROWS_AS(batch_entropy(bad), std::invalid_argument);
  Tensor negative({1, 2}, {1.5f, -0.5f});
  CHECK_THROWS_AS(batch_entropy(negative), std::invalid_argument);
}

TEST_CASE("tape distillation node agrees with the value computation") {
  Rng rng(27);
  Tensor t_logits({4, 6}), s_logits({4, 6});
  rng.fill_normal(t_logits, 0, 2);
  rng.fill_normal(s_logits, 0, 2);
  for (const double tau : {1.0, 2.5}) {
    const double want = kd_divergence(t_logits, s_logits, tau);
    Tape tape;
    const int node = kd_divergence_node(tape, tape.input(t_logits),
                                        tape.input(s_logits), tau);
    CHECK(double(tape.value(node)[0]) == doctest::Approx(want).epsilon(1e-5));

    Tape tape2;
    const int node2 = kd_divergence_const_teacher_node(
        tape2, t_logits, tape2.input(s_logits), tau);
    CHECK(double(tape2.value(node2)[0]) == doctest::Approx(want).epsilon(1e-5));
  }
}

TEST_CASE("constant-teacher distillation sends no gradient to the teacher") {
  Rng rng(28);
  Tensor t_logits({3, 4}), s_logits({3, 4});
  rng.fill_normal(t_logits);
  rng.fill_normal(s_logits);
  Tape tape;
  const int s = tape.param("student", s_logits);
  tape.backward(kd_divergence_const_teacher_node(tape, t_logits, s, 2.0));
  const Tensor g = tape.param_gradients().at("student");
  CHECK(g.all_finite());
  double total = 0;
  for (float v : g.data) total += std::abs(double(v));
  CHECK(total > 0);

  // Both-sides node: the teacher leaf receives gradients too.
  Tape tape2;
  const int tl = tape2.param("teacher", t_logits);
  const int sl = tape2.param("student2", s_logits);
  tape2.backward(kd_divergence_node(tape2, tl, sl, 2.0));
  const auto grads = tape2.param_gradients();
  double tsum = 0;
  for (float v : grads.at("teacher").data) tsum += std::abs(double(v));
  CHECK(tsum > 0);
}

TEST_CASE("loss node gradients pass finite differences") {
  Rng rng(29);
  SUBCASE("kd divergence both sides") {
    const auto res = testutil::fd_check(
        {testutil::random_normal64(rng, {3, 5}),
         testutil::random_normal64(rng, {3, 5})},
        [](Tape64& t, const std::vector<int>& l) {
          auto [tp, tlp] = t.softmax_logs(l[0], 2.0);
          auto [sp, slp] = t.softmax_logs(l[1], 2.0);
          (void)sp;
          return t.mean_all(t.row_sum(t.mul(tp, t.sub(tlp, slp))));
        });
    CHECK_MESSAGE(res.ok(1e-4), res.worst);
  }
  SUBCASE("moment matching through mean and variance nodes") {
    const auto res = testutil::fd_check(
        {testutil::random_normal64(rng, {2, 3, 3, 4})},
        [](Tape64& t, const std::vector<int>& l) {
          const int mean = t.channel_mean(l[0]);
          const int var = t.channel_var(l[0]);
          const int vh = t.clamp_min(var, 1e-8);
          Tensor64 ref_mean({4}), ref_var = Tensor64::full({4}, 1.5);
          Tensor64 inv2v = Tensor64::full({4}, 1.0 / 3.0);
          Tensor64 offset =
              Tensor64::full({4}, 0.5 * std::log(1.5) - 0.5);
          const int dmu = t.sub(mean, t.input(ref_mean));
          const int quad = t.mul(t.add(t.square(dmu), vh), t.input(inv2v));
          const int logv = t.mul_scalar(t.log_(vh), -0.5);
          return t.sum_all(t.add(t.add(quad, logv), t.input(offset)));
        });
    CHECK_MESSAGE(res.ok(1e-4), res.worst);
  }
  SUBCASE("entropy terms through softmax") {
    const auto res = testutil::fd_check(
        {testutil::random_normal64(rng, {4, 5})},
        [](Tape64& t, const std::vector<int>& l) {
          auto [p, lp] = t.softmax_logs(l[0], 1.0);
          (void)lp;
          const int inst = t.mul_scalar(t.mean_all(t.row_sum(t.xlogx(p))), -1.0);
          const int batch = t.mul_scalar(t.sum_all(t.xlogx(t.col_mean(p))), -1.0);
          return t.sub(inst, batch);
        });
    CHECK_MESSAGE(res.ok(1e-4), res.worst);
  }
}

TEST_CASE("moment matching loss fixed values") {
  Tape tape;
  const int m1 = tape.input(Tensor({1}, {1.0f}));
  const int v1 = tape.input(Tensor({1}, {1.0f}));
  const std::vector<std::pair<Tensor, Tensor>> ref = {
      {Tensor({1}, {0.0f}), Tensor({1}, {1.0f})}};
  const int node = moment_match_loss_node(tape, {m1}, {v1}, ref);
  CHECK(double(tape.value(node)[0]) == doctest::Approx(0.5).epsilon(1e-6));

  // Matching stats give zero, and two layers add their contributions.
  Tape tape2;
  const int ma = tape2.input(Tensor({2}, {0.3f, -0.7f}));
  const int va = tape2.input(Tensor({2}, {1.2f, 0.8f}));
  const std::vector<std::pair<Tensor, Tensor>> ref2 = {
      {Tensor({2}, {0.3f, -0.7f}), Tensor({2}, {1.2f, 0.8f})}};
  const int zero = moment_match_loss_node(tape2, {ma}, {va}, ref2);
  CHECK(std::abs(double(tape2.value(zero)[0])) < 1e-6);

  Tape tape3;
  const int mb = tape3.input(Tensor({1}, {1.0f}));
  const int vb = tape3.input(Tensor({1}, {1.0f}));
  const int mc = tape3.input(Tensor({1}, {1.0f}));
  const int vc = tape3.input(Tensor({1}, {1.0f}));
  const std::vector<std::pair<Tensor, Tensor>> ref3 = {
      {Tensor({1}, {0.0f}), Tensor({1}, {1.0f})},
      {Tensor({1}, {0.0f}), Tensor({1}, {1.0f})}};
  const int two = moment_match_loss_node(tape3, {mb, mc}, {vb, vc}, ref3);
  CHECK(double(tape3.value(two)[0]) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("moment matching loss requires aligned layer lists") {
  Tape tape;
  const int m = tape.input(Tensor({2}));
  const int v = tape.input(Tensor::full({2}, 1.0f));
  CHECK_THROWS_AS(
      moment_match_loss_node(tape, {m}, {v}, {}),
      std::invalid_argument);
}

TEST_CASE("constraint loss composition hits hand values") {
  // Matched statistics, one-hot teacher rows spread over all classes:
  // 0 (moments) + 0 (instance) - ln K (batch).
  Tape tape;
  const int m = tape.input(Tensor({2}, {0.1f, 0.2f}));
  const int v = tape.input(Tensor({2}, {1.0f, 2.0f}));
  const std::vector<std::pair<Tensor, Tensor>> ref = {
      {Tensor({2}, {0.1f, 0.2f}), Tensor({2}, {1.0f, 2.0f})}};
  const int probs = tape.input(one_hot_rows({0, 1, 2, 3}, 4));
  const AuxNodes aux = aux_loss_node(tape, {m}, {v}, ref, probs, AuxSwitches{});
  CHECK(double(tape.value(aux.total)[0]) ==
        doctest::Approx(-std::log(4.0)).epsilon(1e-5));

  // Matched statistics, uniform teacher rows: ln K - ln K = 0.
  Tape tape2;
  const int m2 = tape2.input(Tensor({2}, {0.1f, 0.2f}));
  const int v2 = tape2.input(Tensor({2}, {1.0f, 2.0f}));
  const int probs2 = tape2.input(uniform_rows(4, 4));
  const AuxNodes aux2 =
      aux_loss_node(tape2, {m2}, {v2}, ref, probs2, AuxSwitches{});
  CHECK(std::abs(double(tape2.value(aux2.total)[0])) < 1e-6);
}

TEST_CASE("disabling a constraint term removes exactly its contribution") {
  Rng rng(30);
  Tensor logits({5, 4});
  rng.fill_normal(logits, 0, 2);
  const Tensor probs = softmax_rows(logits, 1.0).probs;
  Tensor mean({3}), var({3});
  rng.fill_normal(mean, 0, 0.5);
  rng.fill_uniform(var, 0.5, 2.0);
  const std::vector<std::pair<Tensor, Tensor>> ref = {
      {Tensor({3}), Tensor::full({3}, 1.0f)}};

  auto eval = [&](const AuxSwitches& sw) {
    Tape tape;
    const AuxNodes aux =
        aux_loss_node(tape, {tape.input(mean)}, {tape.input(var)}, ref,
                      tape.input(probs), sw);
    struct Out {
      double total, moment, inst, batch;
    } o{};
    o.total = tape.value(aux.total)[0];
    o.moment = aux.moment_match >= 0 ? tape.value(aux.moment_match)[0] : 0;
    o.inst =
        aux.instance_entropy >= 0 ? tape.value(aux.instance_entropy)[0] : 0;
    o.batch = aux.batch_entropy >= 0 ? tape.value(aux.batch_entropy)[0] : 0;
    return o;
  };

  const auto full = eval(AuxSwitches{});
  CHECK(full.total ==
        doctest::Approx(full.moment + full.inst - full.batch).epsilon(1e-5));

  AuxSwitches no_moment{};
  no_moment.moment_match = false;
  CHECK(eval(no_moment).total ==
        doctest::Approx(full.total - full.moment).epsilon(1e-4));

  AuxSwitches no_inst{};
  no_inst.instance_entropy = false;
  CHECK(eval(no_inst).total ==
        doctest::Approx(full.total - full.inst).epsilon(1e-4));

  AuxSwitches no_batch{};
  no_batch.batch_entropy = false;
  CHECK(eval(no_batch).total ==
        doctest::Approx(full.total + full.batch).epsilon(1e-4));

  AuxSwitches none{};
  none.moment_match = none.instance_entropy = none.batch_entropy = false;
  Tape tape;
  CHECK_THROWS_AS(aux_loss_node(tape, {tape.input(mean)}, {tape.input(var)},
                                ref, tape.input(probs), none),
                  std::invalid_argument);
}

TEST_CASE("adversarial objective composes divergence and constraint") {
  Rng rng(31);
  Tensor t_logits({4, 5}), s1({4, 5}), s2({4, 5});
  rng.fill_normal(t_logits);
  rng.fill_normal(s1);
  rng.fill_normal(s2);

  // Single student, alpha 0: objective equals the plain divergence.
  {
    Tape tape;
    const auto adv = adversarial_objective_node(
        tape, tape.input(t_logits), {tape.input(s1)}, -1, 0.0, 1.0);
    CHECK(double(tape.value(adv.objective)[0]) ==
          doctest::Approx(kd_divergence(t_logits, s1, 1.0)).epsilon(1e-5));
    CHECK(adv.pair_kd.size() == 1);
  }

  // Single student with a constraint: kd - alpha * aux.
  {
    Tape tape;
    const int aux = tape.input(Tensor::scalar(0.7f));
    const auto adv = adversarial_objective_node(
        tape, tape.input(t_logits), {tape.input(s1)}, aux, 2.0, 1.0);
    CHECK(double(tape.value(adv.objective)[0]) ==
          doctest::Approx(kd_divergence(t_logits, s1, 1.0) - 2.0 * 0.7)
              .epsilon(1e-5));
  }

  // Two identical students: mean equals each term.
  {
    Tape tape;
    const auto adv = adversarial_objective_node(
        tape, tape.input(t_logits), {tape.input(s1), tape.input(s1)}, -1, 0.0,
        1.0);
    CHECK(double(tape.value(adv.objective)[0]) ==
          doctest::Approx(double(tape.value(adv.pair_kd[0])[0])).epsilon(1e-6));
  }

  // Two different students: mean of the pair divergences.
  {
    Tape tape;
    const auto adv = adversarial_objective_node(
        tape, tape.input(t_logits), {tape.input(s1), tape.input(s2)}, -1, 0.0,
        1.0);
    const double want = 0.5 * (kd_divergence(t_logits, s1, 1.0) +
                               kd_divergence(t_logits, s2, 1.0));
    CHECK(double(tape.value(adv.objective)[0]) ==
          doctest::Approx(want).epsilon(1e-5));
  }

  Tape tape;
  CHECK_THROWS_AS(
      adversarial_objective_node(tape, tape.input(t_logits), {}, -1, 0.0, 1.0),
      std::invalid_argument);
  CHECK_THROWS_AS(adversarial_objective_node(tape, tape.input(t_logits),
                                             {tape.input(s1)}, -1, 1.0, 1.0),
                  std::invalid_argument);
}
