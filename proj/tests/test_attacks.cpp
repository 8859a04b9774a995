#include "maskbench/attacks.hpp"
#include "toy.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace maskbench;

namespace {

Tensor random_inputs(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform01(rng);
    return t;
}

DefendedModel small_model(Preprocessor p = Preprocessor::identity(), std::uint64_t seed = 3) {
    return {std::move(p), Mlp::init({12, 16, 3}, seed)};
}

double linf(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST(AttackConfig, Validation) {
    EXPECT_NO_THROW((AttackConfig{0.3, 10}).validate());
    EXPECT_THROW((AttackConfig{-0.1, 10}).validate(), ConfigError);
    EXPECT_THROW((AttackConfig{1.5, 10}).validate(), ConfigError);
    EXPECT_THROW((AttackConfig{0.1, 0}).validate(), ConfigError);
    EXPECT_THROW((AttackConfig{0.1, 1, -0.01}).validate(), ConfigError);
    EXPECT_THROW((AttackConfig{0.1, 1, std::nullopt, true, 0}).validate(), ConfigError);
    EXPECT_DOUBLE_EQ((AttackConfig{0.2, 10}).effective_step_size(), 0.05);
}

TEST(Fgsm, ZeroBudgetIsIdentity) {
    Tensor x = random_inputs(3, 12, 1);
    std::vector<int> y{0, 1, 2};
    EXPECT_EQ(fgsm(small_model(), x, y, 0.0).adversarial.values(), x.values());
}

TEST(Fgsm, LinearClassifierClosedForm) {
    // Binary logits z = x W; d loss / d x = (softmax - onehot) W^T, whose sign
    // for label 0 is sign(W[:,1] - W[:,0]).
    const std::vector<double> w{0.5, -0.2, -1.0, 0.3, 0.25, 0.1, 0.0, 0.0};
    Mlp f({Dense{Tensor::matrix(4, 2, w), Tensor::zeros({1, 2})}});
    Tensor x = Tensor::matrix(1, 4, {0.5, 0.95, 0.02, 0.5});
    std::vector<int> y{0};
    const double eps = 0.1;
    Tensor adv = fgsm({Preprocessor::identity(), f}, x, y, eps).adversarial;
    for (std::size_t i = 0; i < 4; ++i) {
        const double d = w[2 * i + 1] - w[2 * i];
        const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        EXPECT_DOUBLE_EQ(adv[i], std::clamp(x[i] + eps * s, 0.0, 1.0)) << i;
    }
}

TEST(Fgsm, QuantizedDefenseIsGradientDead) {
    Tensor x = random_inputs(2, 12, 2);
    std::vector<int> y{0, 1};
    AttackResult r = fgsm(small_model(Preprocessor::hard_quantize(8)), x, y, 0.1);
    EXPECT_EQ(r.adversarial.values(), x.values());
    EXPECT_EQ(r.gradient_dead, (std::vector<bool>{true, true}));
}

TEST(Pgd, OneStepWithoutRandomStartIsFgsm) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Tensor x = random_inputs(4, 12, seed);
        std::vector<int> y{0, 1, 2, 0};
        const double eps = 0.05 + 0.01 * static_cast<double>(seed);
        auto m = small_model(Preprocessor::identity(), seed);
        Tensor a = pgd(m, x, y, AttackConfig{eps, 1, eps, false, 1, seed}).adversarial;
        Tensor b = fgsm(m, x, y, eps, seed).adversarial;
        EXPECT_EQ(a.values(), b.values()) << seed;
    }
}

TEST(Pgd, GradientDeadFallsBackToRandomStart) {
    Tensor x = random_inputs(1, 12, 3);
    std::vector<int> y{1};
    AttackResult r = pgd(small_model(Preprocessor::hard_quantize(8)), x, y, AttackConfig{0.1, 10, std::nullopt, true, 1, 4});
    EXPECT_TRUE(r.gradient_dead[0]);
    EXPECT_NE(r.adversarial.values(), x.values());
    EXPECT_LE(linf(r.adversarial, x), 0.1 + 1e-12);
}

TEST(Pgd, BestIterateDominatesTrace) {
    Tensor x = random_inputs(3, 12, 5);
    std::vector<int> y{2, 0, 1};
    AttackResult r = pgd(small_model(), x, y, AttackConfig{0.2, 15, std::nullopt, true, 1, 6});
    for (std::size_t row = 0; row < 3; ++row) {
        ASSERT_EQ(r.loss_trace[row].size(), 15u);
        for (double l : r.loss_trace[row]) EXPECT_GE(r.best_loss[row], l);
    }
    Rng unused(0);
    auto final_losses = eval_losses(small_model(), r.adversarial, y, unused);
    for (std::size_t row = 0; row < 3; ++row) EXPECT_DOUBLE_EQ(final_losses[row], r.best_loss[row]);
}

TEST(Pgd, NonFiniteLossAborts) {
    auto params = Mlp::init({12, 16, 3}, 1).flat_parameters();
    params.back() = NAN;
    DefendedModel m{Preprocessor::identity(), Mlp::from_flat({12, 16, 3}, params)};
    std::vector<int> y{0};
    EXPECT_THROW(pgd(m, random_inputs(1, 12, 1), y, AttackConfig{0.1, 3}), NonFiniteError);
}

TEST(EotPgd, SingleSampleIsPgd) {
    Tensor x = random_inputs(2, 12, 7);
    std::vector<int> y{0, 2};
    for (const auto& p : {Preprocessor::identity(), Preprocessor::additive_noise(0.05)}) {
        AttackConfig cfg{0.1, 10, std::nullopt, true, 1, 8};
        auto a = pgd(small_model(p), x, y, cfg);
        auto b = eot_pgd(small_model(p), x, y, cfg);
        EXPECT_EQ(a.adversarial.values(), b.adversarial.values());
        EXPECT_EQ(a.best_loss, b.best_loss);
    }
}

TEST(EotPgd, DeterministicPreprocessorAveragesIdenticalGradients) {
    Tensor x = random_inputs(2, 12, 9);
    std::vector<int> y{1, 2};
    AttackConfig cfg{0.1, 10, std::nullopt, true, 1, 10};
    auto a = pgd(small_model(Preprocessor::diff_round(1)), x, y, cfg);
    cfg.eot_samples = 8;
    auto b = eot_pgd(small_model(Preprocessor::diff_round(1)), x, y, cfg);
    EXPECT_EQ(a.adversarial.values(), b.adversarial.values());
}

TEST(EotPgd, RandomizedPreprocessorHasGradientVariance) {
    Tensor x = random_inputs(1, 12, 11);
    std::vector<int> y{0};
    auto m = small_model(Preprocessor::additive_noise(0.1));
    Rng r1(5), r2(5);
    LossGrad a = attack_loss_grad(m, x, y, 8, r1, true);
    LossGrad b = attack_loss_grad(m, x, y, 8, r2, true);
    ASSERT_EQ(a.samples.size(), 8u);
    double var = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
        for (const auto& s : a.samples) var += (s[k] - a.grad[k]) * (s[k] - a.grad[k]);
    EXPECT_GT(var, 0.0);
    EXPECT_EQ(a.grad.values(), b.grad.values());

    AttackConfig cfg{0.1, 5, std::nullopt, true, 8, 12};
    EXPECT_EQ(eot_pgd(m, x, y, cfg).adversarial.values(), eot_pgd(m, x, y, cfg).adversarial.values());
}

TEST(NoiseAttack, CornersAndDeterminism) {
    Tensor x = random_inputs(2, 12, 13);
    std::vector<int> y{0, 1};
    auto m = small_model();
    EXPECT_EQ(noise_attack(m, x, y, 0.0, 5, 1).adversarial.values(), x.values());
    auto a = noise_attack(m, x, y, 0.1, 1, 2), b = noise_attack(m, x, y, 0.1, 1, 2);
    EXPECT_EQ(a.adversarial.values(), b.adversarial.values());
    auto c = noise_attack(m, x, y, 0.1, 20, 3);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double up = std::min(1.0, x[i] + 0.1), down = std::max(0.0, x[i] - 0.1);
        EXPECT_TRUE(c.adversarial[i] == up || c.adversarial[i] == down) << i;
    }
    for (std::size_t row = 0; row < 2; ++row)
        for (double l : c.loss_trace[row]) EXPECT_GE(c.best_loss[row], l);
    EXPECT_THROW(noise_attack(m, x, y, 0.1, 0, 3), ConfigError);
}

TEST(Evaluate, ZeroBudgetKeepsCleanAccuracy) {
    Dataset d = synthetic_blobs(BlobSpec{1, 10, 12, 3, 0.8, 0.1});
    for (AttackMethod method : {AttackMethod::fgsm, AttackMethod::pgd, AttackMethod::noise, AttackMethod::none}) {
        AttackSpec s{"zero", method, AttackConfig{0.0, 5, 0.01, true, 1, 1}};
        EvalReport r = evaluate(small_model(), d, s);
        EXPECT_EQ(r.robust_accuracy, r.clean_accuracy) << to_string(method);
        EXPECT_EQ(r.max_linf, 0.0);
    }
}

TEST(Evaluate, ReportInvariantsAndThreadIndependence) {
    Dataset d = synthetic_blobs(BlobSpec{2, 15, 12, 3, 0.8, 0.1});
    AttackSpec s{"pgd", AttackMethod::pgd, AttackConfig{0.2, 10, std::nullopt, true, 1, 7}};
    EvalReport r1 = evaluate(small_model(), d, s, {1});
    EvalReport r4 = evaluate(small_model(), d, s, {4});
    EXPECT_EQ(r1.to_json().dump(), r4.to_json().dump());
    EXPECT_EQ(r1.samples_csv(), r4.samples_csv());
    EXPECT_DOUBLE_EQ(r1.robust_accuracy + r1.attack_success_rate, 1.0);
    EXPECT_LE(r1.max_linf, 0.2 + 1e-9);
    for (const auto& rec : r1.samples) EXPECT_LE(rec.linf, 0.2 + 1e-9);
    EXPECT_EQ(r1.samples_csv().substr(0, r1.samples_csv().find('\n')),
              "index,label,clean_pred,adv_pred,linf_distortion,gradient_dead");
    EXPECT_EQ(r1.to_json()["schema_version"], 1);
}

TEST(Evaluate, PerSampleErrorsAreRecorded) {
    auto params = Mlp::init({12, 16, 3}, 1).flat_parameters();
    params.back() = NAN;
    DefendedModel m{Preprocessor::identity(), Mlp::from_flat({12, 16, 3}, params)};
    Dataset d = synthetic_blobs(BlobSpec{1, 2, 12, 3, 0.8, 0.1});
    EvalReport r = evaluate(m, d, AttackSpec{"pgd", AttackMethod::pgd, AttackConfig{0.1, 3}});
    EXPECT_EQ(r.error_count, d.size());
    EXPECT_EQ(r.to_json()["errors"].size(), d.size());
    EXPECT_EQ(r.max_linf, 0.0);
}

TEST(Evaluate, AttackSpecOverridesGradientMode) {
    Dataset d = synthetic_blobs(BlobSpec{1, 4, 12, 3, 0.8, 0.1});
    auto m = small_model(Preprocessor::hard_quantize(8));
    AttackSpec s{"pgd", AttackMethod::pgd, AttackConfig{0.1, 5, std::nullopt, true, 1, 2}};
    EXPECT_EQ(evaluate(m, d, s).gradient_dead_count, d.size());
    s.gradient_mode = GradientMode::omit_at_attack;
    EXPECT_EQ(evaluate(m, d, s).gradient_dead_count, 0u);
}

// ---- desk-scale directions ----------------------------------------------------

TEST(DeskScale, QuantizedDefenseThirdBreak) {
    DefendedModel q{Preprocessor::hard_quantize(8), toy::standard()};
    EvalReport dead = evaluate(q, toy::data().test, toy::pgd(100));
    EXPECT_EQ(dead.gradient_dead_count, dead.n_samples);
    EXPECT_LE(std::abs(dead.robust_accuracy - dead.clean_accuracy), 0.02);
    EvalReport omit = evaluate(q, toy::data().test, toy::with_mode(toy::pgd(100), GradientMode::omit_at_attack));
    EXPECT_LE(omit.robust_accuracy, 0.05);
}

TEST(DeskScale, UndefendedBudgetMonotonicity) {
    for (const Mlp* m : {&toy::standard(), &toy::adversarial()}) {
        DefendedModel dm{Preprocessor::identity(), *m};
        const auto& test = toy::data().test;
        const double a100 = evaluate(dm, test, toy::pgd(100)).robust_accuracy;
        const double a7 = evaluate(dm, test, toy::pgd(7)).robust_accuracy;
        const double a1 = evaluate(dm, test, toy::fgsm_spec()).robust_accuracy;
        EXPECT_LE(a100, a7);
        EXPECT_LE(a7, a1);
        EXPECT_LE(evaluate(dm, test, toy::pgd(100, 0.5)).robust_accuracy, 0.1 + 0.05);
        AttackSpec noise{"noise", AttackMethod::noise, AttackConfig{toy::eps, 1, std::nullopt, false, 1, 3}, 100};
        EXPECT_LE(evaluate(dm, test, noise).attack_success_rate, evaluate(dm, test, toy::pgd(100)).attack_success_rate);
    }
}
