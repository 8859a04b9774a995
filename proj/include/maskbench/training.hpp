#pragma once

#include "maskbench/attacks.hpp"
#include "maskbench/data.hpp"
#include "maskbench/defenses.hpp"
#include "maskbench/nn.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

namespace maskbench {

// Inner-loop PGD settings for adversarial training (random start always on).
struct AdversarialTraining {
    double eps = 0.0;
    int steps = 7;
    std::optional<double> step_size;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    std::optional<AdversarialTraining> adversarial;

    void validate(std::size_t dataset_size, const std::string& path = "model") const {
        if (batch_size == 0) throw ConfigError(path + ".batch_size", "must be positive");
        if (batch_size > dataset_size)
            throw ConfigError(path + ".batch_size", "exceeds the dataset size " + std::to_string(dataset_size));
        if (!(learning_rate > 0.0)) throw ConfigError(path + ".learning_rate", "must be positive");
        if (adversarial) {
            AttackConfig{adversarial->eps, adversarial->steps, adversarial->step_size}.validate(path + ".adversarial");
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"epochs", epochs}, {"batch_size", batch_size}, {"learning_rate", learning_rate}, {"seed", seed}};
        if (adversarial) {
            AttackConfig c{adversarial->eps, adversarial->steps, adversarial->step_size};
            j["adversarial"] = {{"eps", c.eps}, {"steps", c.steps}, {"step_size", c.effective_step_size()}};
        }
        return j;
    }
};

struct TrainResult {
    Mlp model;
    std::vector<double> loss_trace; // mean batch loss per epoch
};

// Plain minibatch SGD on cross-entropy. `input_transform` is applied (forward
// only) before the classifier, so a classifier can be fitted to a defense's
// output; adversarial examples are then crafted against the composition.
inline TrainResult train(Mlp model, const Dataset& data, const TrainConfig& cfg,
                         const Preprocessor& input_transform = Preprocessor::identity()) {
    if (data.empty()) throw ConfigError("dataset", "training needs at least one sample");
    cfg.validate(data.size());
    if (data.dim != model.input_dim())
        throw ShapeError("train: dataset dimension " + std::to_string(data.dim) + " does not match model input " +
                         std::to_string(model.input_dim()));

    TrainResult result;
    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, {epoch, 0xe90c}));
        std::shuffle(order.begin(), order.end(), rng);

        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batches) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
            Tensor x = data.batch(idx);
            std::vector<int> y;
            for (auto i : idx) y.push_back(data.labels[i]);

            if (cfg.adversarial) {
                AttackConfig ac{cfg.adversarial->eps, cfg.adversarial->steps, cfg.adversarial->step_size, true, 1,
                                derive_seed(cfg.seed, {epoch, batches, 0xad7})};
                x = pgd(DefendedModel{input_transform, model}, x, y, ac).adversarial;
            }

            Tape tape;
            Mlp bound = model.bind(tape);
            Tensor logits = mlp_forward(bound, input_transform.forward(x, &rng));
            Tensor loss = cross_entropy(logits, y);
            if (!std::isfinite(loss.item())) throw TrainingDiverged(epoch, "non-finite loss");
            total += loss.item();
            model = sgd_step(model, parameter_grads(bound, backward(tape, loss)), cfg.learning_rate);
            if (!model.all_finite()) throw TrainingDiverged(epoch, "non-finite parameters");
        }
        result.loss_trace.push_back(total / static_cast<double>(batches));
    }
    result.model = std::move(model);
    return result;
}

inline double accuracy(const Mlp& model, const Dataset& data, const Preprocessor& transform = Preprocessor::identity()) {
    if (data.empty()) return 0.0;
    Rng rng(derive_seed(0, {0xacc}));
    auto pred = predict(mlp_forward(model, transform.forward(data.all_inputs(), &rng)));
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == data.labels[i];
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

} // namespace maskbench
