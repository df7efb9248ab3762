#include "emo/losses.hpp"
#include "emo/nn/gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace emo;
using emo::testing::random_matrix;

namespace {

// Two-pass CCC in long double.
double ccc_reference(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  if (vx == 0 || vy == 0) return 0.0;
  return static_cast<double>(2 * cxy / (vx + vy + (mx - my) * (mx - my)));
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("ccc hand value") {
  std::vector<double> x{1, 2, 3}, y{2, 3, 4};
  CHECK(ccc(x, y) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  CccStats s = ccc_stats(x, y);
  CHECK(s.rho == doctest::Approx(1.0));
  CHECK(s.var_x == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("ccc matches long double reference") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(2, 300);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = 4.0 + 1.5 * g(rng);
      x[i] = 0.6 * y[i] + g(rng) + 0.3;
    }
    CHECK(std::abs(ccc(x, y) - ccc_reference(x, y)) <= 1e-10);
  }
}

TEST_CASE("ccc invariants") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(50), y(50);
  for (int i = 0; i < 50; ++i) {
    x[i] = g(rng);
    y[i] = 0.5 * x[i] + g(rng);
  }
  const double c = ccc(x, y);
  CHECK(c >= -1.0);
  CHECK(c <= 1.0);
  CHECK(ccc(x, x) == doctest::Approx(1.0));
  CHECK(ccc(y, x) == doctest::Approx(c).epsilon(1e-12));

  std::vector<double> neg(50);
  for (int i = 0; i < 50; ++i) neg[i] = -x[i];
  CHECK(ccc_stats(neg, x).rho == doctest::Approx(-1.0));
  CHECK(ccc(neg, x) < 0.0);

  // Shifting the estimate lowers agreement but not correlation.
  std::vector<double> shifted(50);
  for (int i = 0; i < 50; ++i) shifted[i] = x[i] + 2.0;
  CHECK(ccc(shifted, x) < 1.0);
  CHECK(ccc_stats(shifted, x).rho == doctest::Approx(1.0));

  std::vector<double> flat(50, 3.0);
  CHECK(ccc(flat, x) == 0.0);
  CHECK(ccc(x, flat) == 0.0);

  std::vector<double> one{1.0};
  CHECK_THROWS(ccc(one, one));
  CHECK_THROWS(ccc(x, one));
}

TEST_CASE("ccc loss value and gradient") {
  std::mt19937_64 rng(3);
  Matrix labels = 4.0 * Matrix::Ones(3, 8) + random_matrix(3, 8, rng, 2.0);
  Value scores = nn::parameter(labels + random_matrix(3, 8, rng, 0.5));
  const CccWeights w{0.5, 0.3};
  const double l = ccc_loss(scores, labels, w).item();
  auto ccc_row = [&](int r) {
    std::vector<double> a(8), b(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = scores.data()(r, i);
      b[i] = labels(r, i);
    }
    return ccc(a, b);
  };
  const double want = 1.0 - (0.3 * ccc_row(0) + 0.5 * ccc_row(1) + 0.2 * ccc_row(2));
  CHECK(l == doctest::Approx(want).epsilon(1e-12));

  auto r = nn::finite_diff_check([&] { return ccc_loss(scores, labels, w); }, {scores}, 1e-6);
  CHECK_MESSAGE(r.max_relative_error < 1e-6, r.worst);
}

TEST_CASE("ccc loss of perfect predictions is zero") {
  Matrix labels(3, 4);
  labels << 1, 2, 3, 4, 7, 6, 5, 4, 2, 2, 3, 3;
  CHECK(ccc_loss(nn::constant(labels), labels).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy matches log-sum-exp and has finite gradients") {
  std::mt19937_64 rng(4);
  Value logits = nn::parameter(random_matrix(7, 5, rng, 3.0));
  std::vector<int> classes{0, 6, 3, 3, 1};
  double want = 0;
  for (int b = 0; b < 5; ++b)
    want += log_sum_exp(logits.data().col(b)) - logits.data()(classes[b], b);
  want /= 5;
  CHECK(cross_entropy(logits, classes).item() == doctest::Approx(want).epsilon(1e-12));

  auto r = nn::finite_diff_check([&] { return cross_entropy(logits, classes); }, {logits}, 1e-6);
  CHECK_MESSAGE(r.max_relative_error < 1e-6, r.worst);

  Value huge = nn::constant(Matrix::Constant(7, 1, 800.0));
  std::vector<int> c0{2};
  CHECK(cross_entropy(huge, c0).item() == doctest::Approx(std::log(7.0)));
  std::vector<int> bad{7};
  CHECK_THROWS(cross_entropy(huge, bad));
}

TEST_CASE("gamma confidence") {
  const Eigen::Vector3d y(4, 4, 4);
  CHECK(gamma_confidence(y, Eigen::Vector3d(7, 1, 4)) == doctest::Approx(2.0 / 3.0));
  CHECK(gamma_confidence(y, y) == 1.0);
  CHECK(gamma_confidence(y, Eigen::Vector3d(7, 7, 7)) == doctest::Approx(0.5));
  CHECK(gamma_confidence(y, Eigen::Vector3d(40, -30, 20)) == 0.0);
}

TEST_CASE("distillation loss value, bounds and gradient") {
  std::mt19937_64 rng(5);
  Matrix teacher = random_matrix(6, 4, rng);
  Value student = nn::parameter(random_matrix(6, 4, rng));
  std::vector<double> gamma{1.0, 0.5, 0.0, 0.8};

  double want = 0;
  for (int i = 0; i < 4; ++i) {
    const double cos = teacher.col(i).dot(student.data().col(i)) /
                       (teacher.col(i).norm() * student.data().col(i).norm());
    want += gamma[i] * (1 - cos);
  }
  want /= 4;
  const double got = distillation_loss(teacher, student, gamma).item();
  CHECK(got == doctest::Approx(want).epsilon(1e-8));
  CHECK(got >= 0.0);
  CHECK(got <= 2.0);

  auto r = nn::finite_diff_check([&] { return distillation_loss(teacher, student, gamma); },
                                 {student}, 1e-6);
  CHECK_MESSAGE(r.max_relative_error < 1e-6, r.worst);

  CHECK(distillation_loss(teacher, nn::constant(teacher), gamma).item() ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(distillation_loss(teacher, nn::constant(-teacher), std::vector<double>(4, 1.0)).item() ==
        doctest::Approx(2.0));
  // Zero vectors stay finite.
  const double z = distillation_loss(Matrix::Zero(6, 4), nn::constant(Matrix::Zero(6, 4)), gamma).item();
  CHECK(std::isfinite(z));
}

TEST_CASE("schedule boundaries") {
  CHECK(schedule(0).kappa == 0.001);
  CHECK(schedule(0).lambda == 1.0);
  CHECK(schedule(39).kappa == 0.001);
  CHECK(schedule(39).lambda == 1.0);
  CHECK(schedule(40).kappa == 1.0);
  CHECK(schedule(40).lambda == 0.01);
  CHECK(schedule(99).lambda == 0.01);
  CHECK_THROWS(schedule(-1));
  ScheduleConfig custom{3, 0.5, 0.25, 2.0, 0.0};
  CHECK(custom.at(2).kappa == 0.5);
  CHECK(custom.at(3).lambda == 0.0);
}

TEST_CASE("total loss combination") {
  Value a = nn::constant(Matrix::Constant(1, 1, 0.4));
  Value c = nn::constant(Matrix::Constant(1, 1, 1.5));
  Value d = nn::constant(Matrix::Constant(1, 1, 0.3));
  CHECK(total_loss(a, c, d, {0, 0.001, 1.0}).item() ==
        doctest::Approx(0.001 * (0.4 + 0.2 * 1.5) + 0.3));
  CHECK(total_loss(a, c, d, {50, 1.0, 0.01}).item() ==
        doctest::Approx(0.4 + 0.3 + 0.003));
  CHECK(total_loss(a, c, std::nullopt, {0, 0.001, 1.0}).item() == doctest::Approx(0.7));
}

}  // TEST_SUITE
