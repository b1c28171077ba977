#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "v2x/rng.hpp"

namespace v2x {

enum class Head { Linear, Softmax };

struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
};

// Gradients share the Layer shape.
using LayerGrads = std::vector<Layer>;

// Fully-connected ReLU stack with a linear or softmax head. Small enough to
// hand-roll the backward pass; everything is double precision and
// deterministic for a given rng.
class DenseNet {
public:
    DenseNet() = default;
    // sizes = {input, hidden..., output}; weights U(-1/sqrt(fan_in), +1/sqrt(fan_in))
    DenseNet(std::vector<int> sizes, Head head, Rng& rng);

    struct Cache {
        std::vector<Eigen::VectorXd> post;  // post[0] = input, post[k] = activation after layer k
        std::vector<Eigen::VectorXd> pre;   // pre-activation per layer
    };

    Eigen::VectorXd forward(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    Eigen::VectorXd forward(const Eigen::Ref<const Eigen::VectorXd>& x, Cache& cache) const;

    // dL/d(output) in, parameter gradients out (accumulated into grads);
    // returns dL/d(input). grads must be zero-initialized via zero_grads().
    Eigen::VectorXd backward(const Cache& cache, const Eigen::VectorXd& grad_out,
                             LayerGrads& grads) const;

    LayerGrads zero_grads() const;

    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    Head head() const { return head_; }
    const std::vector<int>& sizes() const { return sizes_; }
    int64_t param_count() const;

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

private:
    std::vector<int> sizes_;
    Head head_ = Head::Linear;
    std::vector<Layer> layers_;
};

// Accumulate scaled gradients: dst += scale * src.
void axpy_grads(LayerGrads& dst, const LayerGrads& src, double scale);

double grad_norm(const LayerGrads& grads);
// Scales gradients down so the global norm is at most max_norm.
void clip_grad_norm(LayerGrads& grads, double max_norm);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    LayerGrads m;
    LayerGrads v;
};

AdamState make_adam(const DenseNet& net, double lr);
// Bias-corrected Adam step in place.
void adam_step(DenseNet& net, const LayerGrads& grads, AdamState& state);

// target <- (1 - tau) * target + tau * online
void soft_update(DenseNet& target, const DenseNet& online, double tau);

// Flat little-endian parameter dump with a one-line JSON shape header.
void save_net(const DenseNet& net, const std::string& path);
DenseNet load_net(const std::string& path);

}  // namespace v2x
