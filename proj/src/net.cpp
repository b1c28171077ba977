#include "v2x/net.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace v2x {

DenseNet::DenseNet(std::vector<int> sizes, Head head, Rng& rng)
    : sizes_(std::move(sizes)), head_(head) {
    if (sizes_.size() < 2) throw std::runtime_error("a network needs at least input and output sizes");
    for (int s : sizes_)
        if (s < 1) throw std::runtime_error("layer sizes must be positive");
    layers_.resize(sizes_.size() - 1);
    for (size_t k = 0; k < layers_.size(); ++k) {
        int in = sizes_[k];
        int out = sizes_[k + 1];
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Layer& layer = layers_[k];
        layer.W.resize(out, in);
        layer.b.resize(out);
        // fixed fill order keeps initialization reproducible
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) layer.W(r, c) = rng.uniform(-bound, bound);
        for (int r = 0; r < out; ++r) layer.b(r) = rng.uniform(-bound, bound);
    }
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    Eigen::VectorXd shifted = z.array() - z.maxCoeff();
    Eigen::VectorXd e = shifted.array().exp();
    return e / e.sum();
}

}  // namespace

Eigen::VectorXd DenseNet::forward(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Cache scratch;
    return forward(x, scratch);
}

Eigen::VectorXd DenseNet::forward(const Eigen::Ref<const Eigen::VectorXd>& x, Cache& cache) const {
    if (x.size() != sizes_.front())
        throw std::runtime_error("input size " + std::to_string(x.size()) + " does not match " +
                                 std::to_string(sizes_.front()));
    cache.post.assign(1, x);
    cache.pre.clear();
    Eigen::VectorXd h = x;
    for (size_t k = 0; k < layers_.size(); ++k) {
        Eigen::VectorXd z = layers_[k].W * h + layers_[k].b;
        cache.pre.push_back(z);
        if (k + 1 < layers_.size()) {
            h = z.cwiseMax(0.0);
        } else {
            h = head_ == Head::Softmax ? softmax(z) : z;
        }
        cache.post.push_back(h);
    }
    return h;
}

Eigen::VectorXd DenseNet::backward(const Cache& cache, const Eigen::VectorXd& grad_out,
                                   LayerGrads& grads) const {
    if (cache.pre.size() != layers_.size())
        throw std::runtime_error("backward needs the cache of a matching forward pass");
    if (grads.size() != layers_.size()) throw std::runtime_error("gradient buffer shape mismatch");

    Eigen::VectorXd delta;  // dL/dz of the current layer
    if (head_ == Head::Softmax) {
        const Eigen::VectorXd& y = cache.post.back();
        // softmax jacobian: dz = y .* (dy - (y . dy))
        double inner = y.dot(grad_out);
        delta = y.array() * (grad_out.array() - inner);
    } else {
        delta = grad_out;
    }
    for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
        grads[k].W += delta * cache.post[k].transpose();
        grads[k].b += delta;
        if (k == 0) return layers_[0].W.transpose() * delta;
        Eigen::VectorXd up = layers_[k].W.transpose() * delta;
        // ReLU gate of the previous layer
        delta = (cache.pre[k - 1].array() > 0.0).select(up, 0.0);
    }
    return delta;
}

LayerGrads DenseNet::zero_grads() const {
    LayerGrads grads(layers_.size());
    for (size_t k = 0; k < layers_.size(); ++k) {
        grads[k].W = Eigen::MatrixXd::Zero(layers_[k].W.rows(), layers_[k].W.cols());
        grads[k].b = Eigen::VectorXd::Zero(layers_[k].b.size());
    }
    return grads;
}

int64_t DenseNet::param_count() const {
    int64_t n = 0;
    for (const Layer& l : layers_) n += l.W.size() + l.b.size();
    return n;
}

void axpy_grads(LayerGrads& dst, const LayerGrads& src, double scale) {
    if (dst.size() != src.size()) throw std::runtime_error("gradient shape mismatch");
    for (size_t k = 0; k < dst.size(); ++k) {
        dst[k].W += scale * src[k].W;
        dst[k].b += scale * src[k].b;
    }
}

double grad_norm(const LayerGrads& grads) {
    double sq = 0.0;
    for (const Layer& g : grads) sq += g.W.squaredNorm() + g.b.squaredNorm();
    return std::sqrt(sq);
}

void clip_grad_norm(LayerGrads& grads, double max_norm) {
    double norm = grad_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    double scale = max_norm / norm;
    for (Layer& g : grads) {
        g.W *= scale;
        g.b *= scale;
    }
}

AdamState make_adam(const DenseNet& net, double lr) {
    AdamState state;
    state.lr = lr;
    state.m = net.zero_grads();
    state.v = net.zero_grads();
    return state;
}

void adam_step(DenseNet& net, const LayerGrads& grads, AdamState& state) {
    if (grads.size() != net.layers().size()) throw std::runtime_error("gradient shape mismatch");
    ++state.step;
    double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square()).matrix();
        theta.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    };
    for (size_t k = 0; k < grads.size(); ++k) {
        update(net.layers()[k].W, state.m[k].W, state.v[k].W, grads[k].W);
        update(net.layers()[k].b, state.m[k].b, state.v[k].b, grads[k].b);
    }
}

void soft_update(DenseNet& target, const DenseNet& online, double tau) {
    if (target.sizes() != online.sizes()) throw std::runtime_error("network shape mismatch");
    for (size_t k = 0; k < target.layers().size(); ++k) {
        target.layers()[k].W = (1.0 - tau) * target.layers()[k].W + tau * online.layers()[k].W;
        target.layers()[k].b = (1.0 - tau) * target.layers()[k].b + tau * online.layers()[k].b;
    }
}

void save_net(const DenseNet& net, const std::string& path) {
    nlohmann::json header;
    header["sizes"] = net.sizes();
    header["head"] = net.head() == Head::Softmax ? "softmax" : "linear";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << header.dump() << "\n";
    for (const Layer& l : net.layers()) {
        out.write(reinterpret_cast<const char*>(l.W.data()),
                  static_cast<std::streamsize>(sizeof(double) * l.W.size()));
        out.write(reinterpret_cast<const char*>(l.b.data()),
                  static_cast<std::streamsize>(sizeof(double) * l.b.size()));
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

DenseNet load_net(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("missing header in " + path);
    nlohmann::json header = nlohmann::json::parse(line);
    std::vector<int> sizes = header.at("sizes").get<std::vector<int>>();
    Head head = header.at("head").get<std::string>() == "softmax" ? Head::Softmax : Head::Linear;
    Rng throwaway(0);
    DenseNet net(sizes, head, throwaway);
    for (Layer& l : net.layers()) {
        in.read(reinterpret_cast<char*>(l.W.data()),
                static_cast<std::streamsize>(sizeof(double) * l.W.size()));
        in.read(reinterpret_cast<char*>(l.b.data()),
                static_cast<std::streamsize>(sizeof(double) * l.b.size()));
    }
    if (!in) throw std::runtime_error("truncated parameters in " + path);
    char extra;
    if (in.read(&extra, 1)) throw std::runtime_error("trailing bytes in " + path);
    return net;
}

}  // namespace v2x
