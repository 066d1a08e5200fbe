#include "putt/adam.hpp"
#include "putt/loss.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace putt;

namespace {

struct Problem {
    QttLayout layout{2, 3};
    TensorTrain tt;
    IndexBatch batch{3};
    std::vector<double> targets;
};

Problem make_problem(std::uint64_t seed, std::size_t batch_size) {
    Problem p;
    p.tt = random_tt(p.layout, 3, 0.7, seed);
    std::mt19937_64 rng(seed + 1);
    std::uniform_int_distribution<std::size_t> u(0, p.layout.side_length() - 1);
    std::normal_distribution<double> nd;
    for (std::size_t s = 0; s < batch_size; ++s) {
        const std::vector<std::size_t> c{u(rng), u(rng)};
        p.batch.push_back(coords_to_qtt(p.layout, c));
        p.targets.push_back(nd(rng));
    }
    return p;
}

double batch_loss(const TensorTrain& tt, const IndexBatch& batch, const std::vector<double>& targets) {
    const auto pred = eval_batch(tt, batch);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - targets[i]) * (pred[i] - targets[i]);
    return s / static_cast<double>(pred.size());
}

std::size_t linear_of(std::span<const CoreIndex> idx, std::size_t m) {
    std::size_t lin = 0;
    for (CoreIndex j : idx) lin = lin * m + j;
    return lin;
}

} // namespace

TEST(GradMse, MatchesCentralFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto p = make_problem(seed, 17);
        const auto lg = grad_mse(p.tt, p.batch, p.targets);
        EXPECT_NEAR(lg.loss, batch_loss(p.tt, p.batch, p.targets), 1e-12);
        const double h = 1e-6;
        for (std::size_t k = 0; k < p.tt.depth(); ++k) {
            auto data = p.tt.core(k).data();
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double keep = data[i];
                data[i] = keep + h;
                const double up = batch_loss(p.tt, p.batch, p.targets);
                data[i] = keep - h;
                const double down = batch_loss(p.tt, p.batch, p.targets);
                data[i] = keep;
                const double fd = (up - down) / (2.0 * h);
                const double an = lg.grads[k].data()[i];
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
                EXPECT_LE(std::abs(fd - an) / denom, 1e-4) << "core " << k << " entry " << i;
            }
        }
    }
}

TEST(GradMse, ZeroResidualGivesZeroGradient) {
    auto p = make_problem(4, 9);
    p.targets = eval_batch(p.tt, p.batch);
    const auto lg = grad_mse(p.tt, p.batch, p.targets);
    EXPECT_EQ(lg.loss, 0.0);
    for (const auto& g : lg.grads)
        for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(GradMse, RejectsMismatchedInputs) {
    auto p = make_problem(1, 5);
    p.targets.pop_back();
    EXPECT_THROW((void)grad_mse(p.tt, p.batch, p.targets), InvalidArgument);
    EXPECT_THROW((void)grad_mse(p.tt, IndexBatch(3), std::vector<double>{}), InvalidArgument);
    EXPECT_THROW((void)grad_mse(p.tt, IndexBatch(2, {0, 0}), std::vector<double>{1.0}), InvalidArgument);
}

// A with-replacement batch equals a count-weighted pass over the full tensor.
TEST(GradWeightedDense, EquivalentToPerSampleBatch) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto p = make_problem(seed + 10, 200);
        const std::size_t m = p.layout.core_phys_dim();
        const std::size_t n = p.layout.total_entries();
        std::vector<double> full_targets(n, 0.0), weights(n, 0.0);
        // one target per entry so duplicate draws agree
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        for (double& t : full_targets) t = nd(rng);
        for (std::size_t s = 0; s < p.batch.size(); ++s) {
            const std::size_t lin = linear_of(p.batch[s], m);
            p.targets[s] = full_targets[lin];
            weights[lin] += 1.0 / static_cast<double>(p.batch.size());
        }
        const auto a = grad_mse(p.tt, p.batch, p.targets);
        const auto b = grad_weighted_dense(p.tt, weights, full_targets);
        EXPECT_NEAR(a.loss, b.loss, 1e-12);
        for (std::size_t k = 0; k < a.grads.size(); ++k)
            for (std::size_t i = 0; i < a.grads[k].size(); ++i)
                EXPECT_NEAR(a.grads[k].data()[i], b.grads[k].data()[i], 1e-12);
    }
}

TEST(GradWeightedDense, BothAssociationOrdersAgree) {
    // a wide first bond and a narrow last bond exercise both contraction orders
    const QttLayout layout(3, 3);
    const auto tt = random_tt(layout, 20, 0.5, 6);
    const std::size_t n = layout.total_entries();
    std::vector<double> w(n, 1.0 / static_cast<double>(n)), y(n);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (double& t : y) t = nd(rng);
    IndexBatch all(3);
    const std::size_t m = layout.core_phys_dim();
    for (std::size_t lin = 0; lin < n; ++lin)
        all.push_back(std::vector<CoreIndex>{lin / (m * m), (lin / m) % m, lin % m});
    const auto a = grad_mse(tt, all, y);
    const auto b = grad_weighted_dense(tt, w, y);
    EXPECT_NEAR(a.loss, b.loss, 1e-12);
    for (std::size_t k = 0; k < a.grads.size(); ++k)
        for (std::size_t i = 0; i < a.grads[k].size(); ++i) EXPECT_NEAR(a.grads[k].data()[i], b.grads[k].data()[i], 1e-12);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    auto tt = random_tt(QttLayout(2, 3), 4, 1.0, 2);
    const auto before = tt;
    auto st = AdamState::for_model(tt);
    std::vector<TtCore> zeros;
    for (const auto& c : tt.cores()) zeros.emplace_back(c.left(), c.phys(), c.right());
    for (int i = 0; i < 5; ++i) adam_step(st, tt, zeros, 0.1);
    EXPECT_EQ(tt, before);
    EXPECT_EQ(st.step, 5);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
    std::vector<double> p{1.0, -2.0, 0.5, 3.0};
    const std::vector<double> g{0.3, -4.0, 1e-3, 0.0};
    AdamState st({4});
    std::vector<std::span<double>> ps{p};
    std::vector<std::span<const double>> gs{g};
    const double lr = 0.01;
    adam_update(st, ps, gs, lr);
    // bias-corrected first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    const std::vector<double> start{1.0, -2.0, 0.5, 3.0};
    for (std::size_t i = 0; i < 4; ++i) {
        const double expected = start[i] - lr * g[i] / (std::abs(g[i]) + 1e-8);
        EXPECT_NEAR(p[i], expected, 1e-15);
    }
}

TEST(Adam, TwoStepsMatchHandComputation) {
    std::vector<double> p{0.0};
    AdamState st({1});
    std::vector<std::span<double>> ps{p};
    const std::vector<double> g1{1.0}, g2{-0.5};
    adam_update(st, ps, std::vector<std::span<const double>>{g1}, 0.1);
    adam_update(st, ps, std::vector<std::span<const double>>{g2}, 0.1);
    const double m1 = 0.1, v1 = 0.001;
    const double step1 = 0.1 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + 1e-8);
    const double m2 = 0.9 * m1 + 0.1 * -0.5, v2 = 0.999 * v1 + 0.001 * 0.25;
    const double step2 = 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
    EXPECT_NEAR(p[0], -step1 - step2, 1e-14);
}

TEST(Adam, DeterministicAndShapeChecked) {
    auto p = make_problem(3, 32);
    auto a = p.tt, b = p.tt;
    auto sa = AdamState::for_model(a), sb = AdamState::for_model(b);
    for (int i = 0; i < 10; ++i) {
        adam_step(sa, a, grad_mse(a, p.batch, p.targets).grads, 0.01);
        adam_step(sb, b, grad_mse(b, p.batch, p.targets).grads, 0.01);
    }
    EXPECT_EQ(a, b);
    EXPECT_LT(batch_loss(a, p.batch, p.targets), batch_loss(p.tt, p.batch, p.targets));
    std::vector<TtCore> wrong{TtCore(1, 4, 1)};
    EXPECT_THROW(adam_step(sa, a, wrong, 0.01), InvalidArgument);
}
