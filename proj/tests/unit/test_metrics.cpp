#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "lbm/metrics.hpp"
#include "lbm/random.hpp"

using namespace lbm;

namespace {

int best_agreement_brute(const Labels& t, const Labels& p, int k) {
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  int best = -1;
  do {
    int agree = 0;
    for (std::size_t i = 0; i < t.size(); ++i) agree += perm[p[i]] == t[i];
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(MapAssignments, ArgmaxWithLowestIndexTies) {
  VariationalState g;
  g.tau_rows = Matrix(3, 3);
  g.tau_rows << 1, 0, 0, 1.0 / 3, 1.0 / 3, 1.0 / 3, 0.2, 0.5, 0.3;
  g.tau_cols = Matrix::Constant(1, 2, 0.5);
  const LabelAssignment a = map_assignments(g);
  EXPECT_EQ(a.rows, (Labels{0, 0, 1}));
  EXPECT_EQ(a.cols, (Labels{0}));
}

TEST(Align, CyclicShiftAndIdentity) {
  const Labels t{0, 1, 2, 0, 1, 2, 2};
  Labels p(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = (t[i] + 1) % 3;
  const Alignment a = align_labels({t, t}, {p, t}, 3, 3);
  EXPECT_EQ(a.row_perm, (std::vector<int>{2, 0, 1}));
  EXPECT_EQ(a.col_perm, (std::vector<int>{0, 1, 2}));
}

TEST(Align, MatchesExhaustiveSearch) {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Labels t(50), p(50);
    for (int i = 0; i < 50; ++i) {
      t[i] = static_cast<int>(uniform01(rng) * 4);
      p[i] = uniform01(rng) < 0.6 ? (t[i] + rep) % 4 : static_cast<int>(uniform01(rng) * 4);
    }
    const Alignment a = align_labels({t, {0}}, {p, {0}}, 4, 1);
    int agree = 0;
    for (int i = 0; i < 50; ++i) agree += a.row_perm[p[i]] == t[i];
    EXPECT_EQ(agree, best_agreement_brute(t, p, 4));
  }
}

TEST(Hungarian, SixBySixAgainstBruteForce) {
  Rng rng(8);
  Matrix c(6, 6);
  for (int k = 0; k < 36; ++k) c.data()[k] = std::floor(uniform01(rng) * 20);
  const std::vector<int> a = solve_assignment(c);
  double got = 0;
  for (int r = 0; r < 6; ++r) got += c(r, a[r]);
  std::vector<int> perm{0, 1, 2, 3, 4, 5};
  double best = 1e300;
  do {
    double s = 0;
    for (int r = 0; r < 6; ++r) s += c(r, perm[r]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(got, best);
}

TEST(LItem, Formula) {
  const Labels t{0, 0, 1, 1};
  EXPECT_EQ(l_item({t, t}, {t, t}, 2, 2).total, 0.0);
  const Labels half{0, 1, 1, 0};  // two of four wrong whatever the alignment
  const ItemLoss l = l_item({t, t}, {half, half}, 2, 2);
  EXPECT_DOUBLE_EQ(l.row, 0.5);
  EXPECT_DOUBLE_EQ(l.total, 0.75);
  EXPECT_DOUBLE_EQ(l.total, l.row + l.col - l.row * l.col);
}

TEST(LItem, AlignedLossIgnoresRelabeling) {
  const Labels t{0, 1, 2, 2, 1, 0, 1};
  const Labels p{1, 2, 0, 0, 0, 1, 2};
  Labels p2(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) p2[i] = (p[i] + 2) % 3;
  EXPECT_DOUBLE_EQ(l_item({t, t}, {p, t}, 3, 3).total, l_item({t, t}, {p2, t}, 3, 3).total);
  EXPECT_DOUBLE_EQ(l_item({t, p}, {p, t}, 3, 3, false).total, l_item({p, t}, {t, p}, 3, 3, false).total);
}

TEST(LItem, RandomAllocationBaseline) {
  Rng rng(10);
  const int n = 30;
  Labels t(n);
  for (int i = 0; i < n; ++i) t[i] = i % 3;
  double sum = 0;
  for (int d = 0; d < 10000; ++d) {
    Labels pr(n), pc(n);
    for (int i = 0; i < n; ++i) pr[i] = static_cast<int>(uniform01(rng) * 3), pc[i] = static_cast<int>(uniform01(rng) * 3);
    sum += l_item({t, t}, {pr, pc}, 3, 3, false).total;
  }
  EXPECT_NEAR(sum / 10000, 8.0 / 9, 0.01);
}

TEST(ParamMaxError, Examples) {
  ModelParams a;
  a.alpha_rows = a.alpha_cols = Vector::Constant(2, 0.5);
  a.pi = Matrix(2, 2);
  a.pi << 0.1, 0.2, 0.3, 0.4;
  EXPECT_EQ(param_max_error(a, a, {0, 1}, {0, 1}), 0.0);
  ModelParams b = a;
  b.pi(1, 0) += 0.07;
  EXPECT_NEAR(param_max_error(a, b, {0, 1}, {0, 1}), 0.07, 1e-15);
  ModelParams sw = a;
  sw.pi = a.pi.colwise().reverse();
  EXPECT_EQ(param_max_error(a, sw, {1, 0}, {0, 1}), 0.0);
}

TEST(LatentMse, Examples) {
  CompleteSample s;
  s.a = Vector::LinSpaced(4, -1, 1);
  s.b = Vector::LinSpaced(4, 0, 2);
  s.p = Vector::LinSpaced(3, 1, 2);
  s.q = Vector::LinSpaced(3, -1, 0);
  VariationalState g;
  g.nu_a = s.a, g.nu_b = s.b, g.nu_p = s.p, g.nu_q = s.q;
  LatentMse m = latent_mse(s, g);
  EXPECT_EQ(m.a + m.b + m.p + m.q, 0.0);
  g.nu_a.array() += 0.3;
  g.nu_q.array() -= 0.5;
  m = latent_mse(s, g);
  EXPECT_NEAR(m.a, 0.09, 1e-15);
  EXPECT_NEAR(m.q, 0.25, 1e-15);
}
