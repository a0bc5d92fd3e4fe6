#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "xbench/corpus.hpp"
#include "xbench/engine.hpp"
#include "xbench/log.hpp"

namespace xbench {

struct TrainOptions {
    std::size_t epochs = 20;
    double learning_rate = 0.05;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
};

inline double training_accuracy(const ModelGraph& model, const std::vector<CorpusEntry>& data) {
    if (data.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : data) hits += predict(model, e.image) == e.label ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace detail {

struct ParamGrads {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> bias;

    explicit ParamGrads(const ModelGraph& m) : weights(m.layers.size()), bias(m.layers.size()) {
        for (std::size_t i = 0; i < m.layers.size(); ++i)
            std::visit(overloaded{[&](const Conv2D& c) {
                                      weights[i].assign(c.weights.size(), 0.0);
                                      bias[i].assign(c.bias.size(), 0.0);
                                  },
                                  [&](const Dense& d) {
                                      weights[i].assign(d.weights.size(), 0.0);
                                      bias[i].assign(d.bias.size(), 0.0);
                                  },
                                  [](const auto&) {}},
                       m.layers[i]);
    }
};

/// Backpropagates `grad` from the logits, accumulating parameter gradients.
inline void accumulate_param_grads(const ModelGraph& model, const ForwardTrace& trace, Tensor grad,
                                   ParamGrads& out) {
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const Tensor& in = trace.inputs[i];
        if (const auto* c = std::get_if<Conv2D>(&model.layers[i])) {
            const ops::ConvGeometry g(*c, in.shape());
            ops::conv_backward_params(g, in, grad, out.weights[i], out.bias[i]);
            if (i > 0) grad = ops::conv_backward_input(g, grad, c->weights);
            continue;
        }
        if (const auto* d = std::get_if<Dense>(&model.layers[i])) {
            ops::dense_backward_params(*d, in, grad, out.weights[i], out.bias[i]);
            if (i > 0) grad = ops::dense_backward_input(*d, grad, d->weights, in.shape());
            continue;
        }
        grad = layer_backward(model.layers[i], in, grad);
    }
}

} // namespace detail

/// Plain mini-batch gradient descent on softmax cross-entropy. Works on a private copy and returns
/// the snapshot (initial model included) with the highest training accuracy.
inline ModelGraph train_fixture(const ModelGraph& initial, const std::vector<CorpusEntry>& data,
                                const TrainOptions& opts) {
    if (data.empty()) throw ConfigError("training set is empty");
    if (opts.batch_size == 0) throw ConfigError("batch size must be >= 1");
    for (const auto& e : data) check_class(initial, e.label);

    ModelGraph model = initial;
    ModelGraph best = initial;
    double best_acc = training_accuracy(initial, data);
    double last_acc = best_acc;

    std::vector<Tensor> inputs;
    inputs.reserve(data.size());
    for (const auto& e : data) inputs.push_back(preprocess(model, e.image));

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(opts.seed);

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += opts.batch_size, ++batch) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            detail::ParamGrads grads(model);
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto idx = order[k];
                const auto trace = forward(model, inputs[idx]);
                const std::size_t label = data[idx].label;
                batch_loss -= std::log(std::max(trace.probabilities[label], 1e-300));
                Tensor grad(trace.outputs.back().shape());
                for (std::size_t c = 0; c < grad.size(); ++c)
                    grad[c] = static_cast<float>(trace.probabilities[c] - (c == label ? 1.0 : 0.0));
                detail::accumulate_param_grads(model, trace, std::move(grad), grads);
            }
            if (!std::isfinite(batch_loss))
                throw NumericError(fmt::format("non-finite loss at epoch {}, batch {}", epoch, batch));
            epoch_loss += batch_loss;
            const double step = opts.learning_rate / static_cast<double>(end - start);
            for (std::size_t i = 0; i < model.layers.size(); ++i) {
                auto update = [&](std::vector<float>& w, const std::vector<double>& g) {
                    for (std::size_t j = 0; j < w.size(); ++j)
                        w[j] = static_cast<float>(w[j] - step * g[j]);
                };
                std::visit(overloaded{[&](Conv2D& c) {
                                          update(c.weights, grads.weights[i]);
                                          update(c.bias, grads.bias[i]);
                                      },
                                      [&](Dense& d) {
                                          update(d.weights, grads.weights[i]);
                                          update(d.bias, grads.bias[i]);
                                      },
                                      [](auto&) {}},
                           model.layers[i]);
            }
        }
        last_acc = training_accuracy(model, data);
        log().info("epoch {}: loss {:.4f}, train accuracy {:.3f}", epoch,
                   epoch_loss / static_cast<double>(data.size()), last_acc);
        if (last_acc > best_acc) {
            best_acc = last_acc;
            best = model;
        }
    }
    // Prefer the final weights when they are as good as the best snapshot.
    return last_acc >= best_acc ? model : best;
}

} // namespace xbench
