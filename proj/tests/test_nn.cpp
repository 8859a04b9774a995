#include "maskbench/data.hpp"
#include "maskbench/nn.hpp"
#include "maskbench/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace maskbench;

namespace {

Mlp single_layer(std::vector<double> w, std::vector<double> b, std::size_t in, std::size_t out) {
    return Mlp({Dense{Tensor::matrix(in, out, std::move(w)), Tensor::matrix(1, out, std::move(b))}});
}

} // namespace

TEST(Mlp, IdentityNetworkIsIdentity) {
    Mlp m = single_layer({1, 0, 0, 1}, {0, 0}, 2, 2);
    Tensor x = Tensor::matrix(2, 2, {0.3, -0.7, 1.5, 2.0});
    EXPECT_EQ(mlp_forward(m, x).values(), x.values());
}

TEST(Mlp, AffineArithmetic) {
    Mlp m = single_layer({1, 0, 0, 1}, {1, -1}, 2, 2);
    EXPECT_EQ(mlp_forward(m, Tensor::matrix(1, 2, {0, 0})).values(), (std::vector<double>{1, -1}));
}

TEST(Mlp, RejectsBadCompositionAndInput) {
    EXPECT_THROW(Mlp({Dense{Tensor::zeros({2, 3}), Tensor::zeros({1, 3})}, Dense{Tensor::zeros({4, 2}), Tensor::zeros({1, 2})}}),
                 ShapeError);
    Mlp m = Mlp::init({4, 3, 2}, 1);
    EXPECT_THROW(mlp_forward(m, Tensor::zeros({1, 5})), ShapeError);
    EXPECT_THROW(mlp_forward(m, Tensor::zeros({4})), ShapeError);
}

TEST(Mlp, SeededInitIsDeterministicAndGlorotBounded) {
    Mlp a = Mlp::init({64, 128, 64, 10}, 7), b = Mlp::init({64, 128, 64, 10}, 7), c = Mlp::init({64, 128, 64, 10}, 8);
    EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
    EXPECT_NE(a.flat_parameters(), c.flat_parameters());
    Tensor x = Tensor::full({3, 64}, 0.5);
    EXPECT_EQ(mlp_forward(a, x).values(), mlp_forward(b, x).values());
    for (const auto& l : a.layers()) {
        const double limit = std::sqrt(6.0 / static_cast<double>(l.weights.rows() + l.weights.cols()));
        for (double w : l.weights.data()) EXPECT_LE(std::abs(w), limit);
        for (double v : l.bias.data()) EXPECT_EQ(v, 0.0);
    }
    EXPECT_EQ(a.parameter_count(), 64u * 128 + 128 + 128 * 64 + 64 + 64 * 10 + 10);
}

TEST(CrossEntropy, KnownValues) {
    std::vector<int> y{0};
    EXPECT_NEAR(cross_entropy(Tensor::matrix(1, 2, {0, 0}), y).item(), std::log(2.0), 1e-15);
    const double big = cross_entropy(Tensor::matrix(1, 2, {1000, 0}), y).item();
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_NEAR(big, 0.0, 1e-12);
    std::vector<int> y1{1};
    EXPECT_NEAR(cross_entropy(Tensor::matrix(1, 2, {1000, 0}), y1).item(), 1000.0, 1e-9);
}

TEST(CrossEntropy, RejectsOutOfRangeLabels) {
    std::vector<int> bad{2}, neg{-1}, two{0, 1};
    EXPECT_THROW(cross_entropy(Tensor::matrix(1, 2, {0, 0}), bad), Error);
    EXPECT_THROW(cross_entropy(Tensor::matrix(1, 2, {0, 0}), neg), Error);
    EXPECT_THROW(cross_entropy(Tensor::matrix(1, 2, {0, 0}), two), ShapeError);
}

TEST(CrossEntropy, ShiftInvariant) {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        Tensor z = Tensor::zeros({3, 5});
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = uniform(rng, -5, 5);
        std::vector<int> y{0, 2, 4};
        const double shift = uniform(rng, -100, 100);
        EXPECT_NEAR(cross_entropy(z, y).item(), cross_entropy(z + shift, y).item(), 1e-9);
    }
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOnehot) {
    Rng rng(5);
    Tensor z = Tensor::zeros({4, 3});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = uniform(rng, -3, 3);
    std::vector<int> y{0, 1, 2, 1};
    Tape tape;
    Tensor zl = tape.leaf(z);
    Tensor g = backward(tape, cross_entropy(zl, y)).wrt(zl);
    Tensor fd = finite_diff_grad([&](const Tensor& v) { return cross_entropy(v, y).item(); }, z, 1e-5);
    for (std::size_t i = 0; i < z.size(); ++i)
        EXPECT_LT(std::abs(g[i] - fd[i]), 1e-4 * std::max(1e-3, std::abs(fd[i]))) << i;
    for (std::size_t r = 0; r < 4; ++r) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 3; ++c) denom += std::exp(z.at(r, c));
        for (std::size_t c = 0; c < 3; ++c) {
            const double p = std::exp(z.at(r, c)) / denom;
            EXPECT_NEAR(g[r * 3 + c], (p - (static_cast<int>(c) == y[r])) / 4.0, 1e-12);
        }
    }
}

TEST(Training, ParameterGradientsMatchFiniteDifferences) {
    Mlp m = Mlp::init({3, 4, 2}, 3);
    Tensor x = Tensor::matrix(2, 3, {0.1, 0.5, 0.9, 0.7, 0.2, 0.4});
    std::vector<int> y{1, 0};
    Tape tape;
    Mlp bound = m.bind(tape);
    auto grads = parameter_grads(bound, backward(tape, cross_entropy(mlp_forward(bound, x), y)));
    std::vector<double> flat;
    for (const auto& g : grads) {
        flat.insert(flat.end(), g.weights.data().begin(), g.weights.data().end());
        flat.insert(flat.end(), g.bias.data().begin(), g.bias.data().end());
    }
    Tensor theta = Tensor::vector(m.flat_parameters());
    Tensor fd = finite_diff_grad(
        [&](const Tensor& p) { return cross_entropy(mlp_forward(Mlp::from_flat(m.dims(), p.data()), x), y).item(); }, theta,
        1e-6);
    ASSERT_EQ(flat.size(), fd.size());
    for (std::size_t i = 0; i < flat.size(); ++i) EXPECT_NEAR(flat[i], fd[i], 1e-7) << i;
}

TEST(Sgd, UpdateRule) {
    Mlp m = single_layer({1.0}, {0.0}, 1, 1);
    MlpGrads g{Dense{Tensor::matrix(1, 1, {2.0}), Tensor::matrix(1, 1, {0.0})}};
    EXPECT_DOUBLE_EQ(sgd_step(m, g, 0.1).layers()[0].weights[0], 0.8);
    EXPECT_EQ(sgd_step(m, g, 0.0).flat_parameters(), m.flat_parameters());
    Mlp twin = single_layer({1.0}, {0.0}, 1, 1);
    EXPECT_EQ(sgd_step(m, g, 0.3).flat_parameters(), sgd_step(twin, g, 0.3).flat_parameters());
}

TEST(Sgd, ShapeMismatchIsRejected) {
    Mlp m = single_layer({1.0, 2.0}, {0.0}, 2, 1);
    MlpGrads wrong{Dense{Tensor::matrix(1, 2, {1.0, 1.0}), Tensor::matrix(1, 1, {0.0})}};
    EXPECT_THROW(sgd_step(m, wrong, 0.1), ShapeError);
    EXPECT_THROW(sgd_step(m, {}, 0.1), ShapeError);
}

namespace {

Dataset two_blobs() { return synthetic_blobs(BlobSpec{3, 100, 8, 2, 1.0, 0.05}); }

} // namespace

TEST(Training, LearnsSeparableBlobs) {
    Dataset d = two_blobs();
    TrainConfig tc{20, 16, 0.1, 1, std::nullopt};
    TrainResult r = train(Mlp::init({8, 16, 2}, 1), d, tc);
    EXPECT_EQ(r.loss_trace.size(), 20u);
    EXPECT_GE(accuracy(r.model, d), 0.95);
    EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Training, DeterministicAndSensitiveToAdversarialInnerLoop) {
    Dataset d = two_blobs();
    TrainConfig tc{3, 16, 0.1, 1, std::nullopt};
    auto a = train(Mlp::init({8, 16, 2}, 1), d, tc);
    auto b = train(Mlp::init({8, 16, 2}, 1), d, tc);
    EXPECT_EQ(a.model.flat_parameters(), b.model.flat_parameters());
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    tc.adversarial = AdversarialTraining{0.1, 3, std::nullopt};
    auto c = train(Mlp::init({8, 16, 2}, 1), d, tc);
    EXPECT_NE(a.model.flat_parameters(), c.model.flat_parameters());
}

TEST(Training, ZeroEpochsLeavesModelUnchanged) {
    Mlp m = Mlp::init({8, 16, 2}, 1);
    TrainConfig tc{0, 16, 0.1, 1, std::nullopt};
    auto r = train(m, two_blobs(), tc);
    EXPECT_EQ(r.model.flat_parameters(), m.flat_parameters());
    EXPECT_TRUE(r.loss_trace.empty());
}

TEST(Training, ConfigValidation) {
    Dataset d = two_blobs();
    EXPECT_THROW(train(Mlp::init({8, 2}, 1), d, TrainConfig{1, 1000, 0.1, 1, std::nullopt}), ConfigError);
    EXPECT_THROW(train(Mlp::init({8, 2}, 1), d, TrainConfig{1, 0, 0.1, 1, std::nullopt}), ConfigError);
    EXPECT_THROW(train(Mlp::init({8, 2}, 1), d, TrainConfig{1, 16, 0.0, 1, std::nullopt}), ConfigError);
    EXPECT_THROW(train(Mlp::init({9, 2}, 1), d, TrainConfig{1, 16, 0.1, 1, std::nullopt}), ShapeError);
}

TEST(Training, DivergenceReportsEpoch) {
    Dataset d = two_blobs();
    try {
        train(Mlp::init({8, 2}, 1), d, TrainConfig{50, 16, 1e308, 1, std::nullopt});
        FAIL() << "expected divergence";
    } catch (const TrainingDiverged& e) {
        EXPECT_LT(e.epoch(), 50u);
        EXPECT_NE(std::string(e.what()).find("epoch " + std::to_string(e.epoch())), std::string::npos);
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Mlp m = Mlp::init({5, 7, 3}, 11);
    const std::string bytes = encode_checkpoint(m, {{"seed", 11}});
    EXPECT_EQ(bytes, encode_checkpoint(m, {{"seed", 11}}));
    Checkpoint ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.model.flat_parameters(), m.flat_parameters());
    EXPECT_EQ(ck.model.dims(), m.dims());
    EXPECT_EQ(ck.header["seed"], 11);

    auto path = std::filesystem::temp_directory_path() / "maskbench_nn_ckpt.bin";
    save_checkpoint(path, m, {});
    EXPECT_EQ(load_checkpoint(path).model.flat_parameters(), m.flat_parameters());
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsRejected) {
    Mlp m = Mlp::init({5, 7, 3}, 11);
    const std::string good = encode_checkpoint(m, {});
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
    EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 8)), FormatError);
    EXPECT_THROW(decode_checkpoint(good + std::string(8, '\0')), FormatError);
    EXPECT_THROW(decode_checkpoint(good.substr(0, 20)), FormatError);
    EXPECT_THROW(load_checkpoint("/nonexistent/path.ckpt"), FormatError);
}
