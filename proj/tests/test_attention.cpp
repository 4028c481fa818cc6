#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "mateicl/attention.hpp"
#include "mateicl/error.hpp"
#include "mateicl/rng.hpp"
#include "oracles.hpp"

using namespace mateicl;

TEST(Segment, LabelsAndOrdering) {
  EXPECT_EQ(Segment::window(3).label(), "w3");
  EXPECT_EQ(Segment::task().label(), "task");
  EXPECT_TRUE(Segment::task().is_task());
  EXPECT_FALSE(Segment::window(0).is_task());
  EXPECT_EQ(Segment::window(2).window_index(), 2u);
}

TEST(MaskMatrix, CausalWithPast) {
  const MaskMatrix m = MaskMatrix::causal(2, 3);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 5u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(m.allowed(0, k));
  EXPECT_FALSE(m.allowed(0, 4));
  EXPECT_TRUE(m.allowed(1, 4));
}

TEST(KVCache, RejectsWindowAfterTask) {
  KVCache cache(1, 4);
  const std::vector<std::size_t> pos{0};
  cache.append_tokens(pos, std::vector<Segment>{Segment::task()});
  EXPECT_THROW(cache.append_tokens(pos, std::vector<Segment>{Segment::window(0)}), ContractError);
}

TEST(KVCache, TaskStartAndValidation) {
  KVCache cache(1, 2);
  EXPECT_EQ(cache.task_start(), 0u);
  const std::vector<std::size_t> pos{0, 1, 2};
  cache.append_tokens(pos, std::vector<Segment>{Segment::window(0), Segment::window(1), Segment::task()});
  EXPECT_EQ(cache.task_start(), 2u);
  EXPECT_THROW(cache.validate(), ContractError);
  cache.append_layer(0, Tensor2D(3, 2), Tensor2D(3, 2));
  EXPECT_NO_THROW(cache.validate());
}

TEST(BiasMode, ParseAndPrint) {
  EXPECT_EQ(BiasMode::parse("pcw"), BiasMode::pcw());
  EXPECT_EQ(BiasMode::parse("mateicl"), BiasMode::mateicl());
  EXPECT_EQ(BiasMode::parse("structured"), BiasMode::structured());
  EXPECT_EQ(BiasMode::parse("fixed:3.5").fixed_b, 3.5);
  EXPECT_EQ(BiasMode::parse("fixed:2").to_string(), "fixed:2");
  EXPECT_THROW(BiasMode::parse("fixed:0.5"), DomainError);
  EXPECT_THROW(BiasMode::parse("nonsense"), Error);
  EXPECT_THROW(BiasMode::fixed(0.99), DomainError);
}

TEST(BiasSchedule, PublishedTable) {
  const std::pair<std::size_t, double> table[] = {{2, 2}, {3, 2}, {4, 3}, {5, 3}, {6, 4}, {9, 5}};
  EXPECT_FALSE(bias_value(BiasMode::mateicl(), 1).has_value());
  for (const auto& [w, b] : table) EXPECT_EQ(bias_value(BiasMode::mateicl(), w), b) << "W=" << w;
}

TEST(BiasSchedule, MatchesOracleForManyWindowCounts) {
  for (std::size_t w = 1; w <= 64; ++w) EXPECT_EQ(bias_value(BiasMode::mateicl(), w), oracle::schedule(w)) << w;
}

TEST(BiasSchedule, OtherModes) {
  EXPECT_FALSE(bias_value(BiasMode::pcw(), 9).has_value());
  EXPECT_EQ(bias_value(BiasMode::structured(), 7), 7.0);
  EXPECT_FALSE(bias_value(BiasMode::fixed(2.5), 1).has_value());
  EXPECT_EQ(bias_value(BiasMode::fixed(2.5), 2), 2.5);
  EXPECT_FALSE(bias_value(BiasMode::structured(), 1).has_value());
  EXPECT_THROW(bias_value(BiasMode::mateicl(), 0), DomainError);
}

TEST(AtBias, SpotValue) {
  // Two keys per side with task mass 0.2; b = 4 lifts it to 0.5.
  const std::vector<double> row{0.5, 0.3, 0.1, 0.1};
  const auto out = apply_atbias(row, 2, 4.0);
  EXPECT_NEAR(task_mass(out, 2), 0.5, 1e-12);
  EXPECT_NEAR(out[0] / out[1], row[0] / row[1], 1e-12);
}

TEST(AtBias, IdentityAtOne) {
  const std::vector<double> row{0.25, 0.25, 0.5};
  EXPECT_EQ(apply_atbias(row, 1, 1.0), row);
}

TEST(AtBias, Errors) {
  const std::vector<double> row{0.5, 0.5};
  EXPECT_THROW(apply_atbias(row, 1, 0.5), DomainError);
  EXPECT_THROW(apply_atbias(std::vector<double>{0.5, 0.6}, 1, 2.0), ContractError);
}

TEST(AtBias, EdgeMasses) {
  const std::vector<double> all_task{0.3, 0.7};
  const auto a = apply_atbias(all_task, 0, 3.0);
  EXPECT_NEAR(a[0], 0.3, 1e-15);
  const std::vector<double> no_task{0.3, 0.7};
  const auto b = apply_atbias(no_task, 2, 3.0);
  EXPECT_NEAR(b[1], 0.7, 1e-15);
}

TEST(AtBias, MassLawProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> s(2 + rng.below(30));
    for (double& v : s) v = rng.uniform(-8.0, 8.0);
    const auto row = oracle::softmax(s);
    const std::size_t split = rng.below(row.size() + 1);
    const double b = rng.uniform(1.0, 10.0);
    const auto out = apply_atbias(row, split, b);
    double sum = 0.0;
    for (double v : out) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_NEAR(task_mass(out, split), oracle::reweighted_mass(task_mass(row, split), b), 1e-9);
    EXPECT_GE(task_mass(out, split), task_mass(row, split) - 1e-12);
    const auto ref = oracle::reweight(row, split, b);
    for (std::size_t j = 0; j < row.size(); ++j) EXPECT_NEAR(out[j], ref[j], 1e-12);
  }
}

TEST(ComputeNu, EqualScoresGiveCountShare) {
  EXPECT_NEAR(compute_nu(std::vector<double>{0.0, 0.0, 0.0}, std::vector<double>{0.0}), 0.75, 1e-15);
  EXPECT_EQ(compute_nu({}, std::vector<double>{1.0}), 0.0);
  EXPECT_EQ(compute_nu(std::vector<double>{1.0}, {}), 1.0);
  EXPECT_THROW(compute_nu({}, {}), DomainError);
  EXPECT_NEAR(compute_nu(std::vector<double>{1000.0}, std::vector<double>{1000.0}), 0.5, 1e-15);
}

TEST(Attend, MatchesOracleUnderMask) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nq = 1 + rng.below(5), nk = nq + rng.below(5), d = 1 + rng.below(6);
    const Tensor2D q = testing_util::random_tensor(rng, nq, d), k = testing_util::random_tensor(rng, nk, d),
                   v = testing_util::random_tensor(rng, nk, d);
    const MaskMatrix mask = MaskMatrix::causal(nq, nk - nq);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    AttendOptions options;
    options.task_start = nk - nq;
    if (rng.below(2)) options.bias = 3.0;
    const AttendResult r = attend(q, k, v, mask, scale, options);
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> s;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mask.allowed(i, j)) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(q(i, c)) * k(j, c);
        s.push_back(dot * scale);
      }
      auto p = oracle::softmax(s);
      if (options.bias) p = oracle::reweight(p, nk - nq, *options.bias);
      for (std::size_t j = 0; j < nk; ++j) {
        const double expected = j < p.size() ? p[j] : 0.0;
        EXPECT_NEAR(r.weights[i][j], expected, 1e-12);
      }
      for (std::size_t c = 0; c < d; ++c) {
        double o = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) o += p[j] * v(j, c);
        EXPECT_NEAR(r.outputs(i, c), o, 1e-5);
      }
    }
  }
}

TEST(Attend, DiagnosticsReportNuAndPreBias) {
  Rng rng(13);
  const Tensor2D q = testing_util::random_tensor(rng, 2, 4), k = testing_util::random_tensor(rng, 5, 4),
                 v = testing_util::random_tensor(rng, 5, 4);
  AttendOptions options;
  options.task_start = 3;
  options.bias = 2.0;
  options.diagnostics = true;
  const auto r = attend(q, k, v, MaskMatrix::causal(2, 3), 0.5, options);
  ASSERT_EQ(r.nu.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(r.nu[i], 1.0 - task_mass(r.pre_bias_weights[i], 3), 1e-12);
    EXPECT_NEAR(task_mass(r.weights[i], 3), oracle::reweighted_mass(task_mass(r.pre_bias_weights[i], 3), 2.0), 1e-12);
  }
}

TEST(Attend, RowWithoutVisibleKeyThrows) {
  const Tensor2D q(1, 2), k(2, 2), v(2, 2);
  EXPECT_THROW(attend(q, k, v, MaskMatrix(1, 2, false), 1.0), ContractError);
}

TEST(SoftmaxDecomposition, ReconstructsFullAttention) {
  Rng rng(14);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 1 + rng.below(8), nd = 1 + rng.below(8), nq = 1 + rng.below(8);
    const auto kd = testing_util::random_tensor(rng, nd, d, 2.0), vd = testing_util::random_tensor(rng, nd, d),
               kq = testing_util::random_tensor(rng, nq, d, 2.0), vq = testing_util::random_tensor(rng, nq, d);
    std::vector<double> q(d);
    for (double& x : q) x = rng.uniform(-2.0, 2.0);
    const double scale = 0.7;
    const auto dec = decompose_softmax_attention(q, kd, vd, kq, vq, scale);
    std::vector<double> s;
    for (std::size_t i = 0; i < nd + nq; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[c] * (i < nd ? kd(i, c) : kq(i - nd, c));
      s.push_back(dot * scale);
    }
    const auto p = oracle::softmax(s);
    double demo_mass = 0.0;
    std::vector<double> full(d, 0.0);
    for (std::size_t i = 0; i < nd + nq; ++i) {
      if (i < nd) demo_mass += p[i];
      for (std::size_t c = 0; c < d; ++c) full[c] += p[i] * (i < nd ? vd(i, c) : vq(i - nd, c));
    }
    EXPECT_NEAR(dec.nu, demo_mass, 1e-12);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(dec.reconstruction[c], full[c], 1e-9);
  }
}

TEST(SoftmaxDecomposition, EmptySegmentThrows) {
  const std::vector<double> q{1.0};
  EXPECT_THROW(decompose_softmax_attention(q, Tensor2D(0, 1), Tensor2D(0, 1), Tensor2D(1, 1), Tensor2D(1, 1)),
               DomainError);
}

TEST(LinearDecomposition, PartsAddUp) {
  Rng rng(15);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 1 + rng.below(8), nd = rng.below(6), nq = rng.below(6);
    const auto kd = testing_util::random_tensor(rng, nd, d), vd = testing_util::random_tensor(rng, nd, d),
               kq = testing_util::random_tensor(rng, nq, d), vq = testing_util::random_tensor(rng, nq, d);
    std::vector<double> q(d);
    for (double& x : q) x = rng.uniform(-1.0, 1.0);
    const auto dec = decompose_linear_attention(q, kd, vd, kq, vq);
    std::vector<double> direct(d, 0.0);
    for (std::size_t i = 0; i < nd + nq; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[c] * (i < nd ? kd(i, c) : kq(i - nd, c));
      for (std::size_t c = 0; c < d; ++c) direct[c] += dot * (i < nd ? vd(i, c) : vq(i - nd, c));
    }
    for (std::size_t c = 0; c < d; ++c) {
      EXPECT_NEAR(dec.sum[c], direct[c], 1e-12 * (1.0 + std::abs(direct[c])));
      EXPECT_EQ(dec.sum[c], dec.zsl_part[c] + dec.icl_part[c]);
    }
  }
}

TEST(AttentionCsv, HeaderAndRows) {
  std::ostringstream out;
  const std::vector<std::vector<double>> rows{{1.0, 0.0}, {0.25, 0.75}};
  const std::vector<Segment> q{Segment::window(0), Segment::task()}, k{Segment::window(0), Segment::task()};
  write_attention_csv(out, rows, q, k);
  EXPECT_EQ(out.str(), "query,w0,task\nw0,1,0\ntask,0.25,0.75\n");
}

TEST(AttentionCsv, MetaLine) {
  EXPECT_EQ(attention_dump_meta_line({1, 0, 9, BiasMode::mateicl()}), "layer=1,head=0,W=9,bias=mateicl");
}
