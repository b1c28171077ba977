#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "v2x/net.hpp"

using namespace v2x;
using Eigen::VectorXd;

namespace {

// scalar losses used by the finite-difference probe
double probe_loss(const DenseNet& net, const VectorXd& x, const VectorXd& probe, int label) {
    VectorXd y = net.forward(x);
    if (net.head() == Head::Softmax) return -std::log(y(label));
    return probe.dot(y);
}

// analytic gradients of the same losses
LayerGrads probe_grads(const DenseNet& net, const VectorXd& x, const VectorXd& probe, int label) {
    DenseNet::Cache cache;
    VectorXd y = net.forward(x, cache);
    VectorXd grad_out;
    if (net.head() == Head::Softmax) {
        grad_out = VectorXd::Zero(y.size());
        grad_out(label) = -1.0 / y(label);
    } else {
        grad_out = probe;
    }
    LayerGrads grads = net.zero_grads();
    net.backward(cache, grad_out, grads);
    return grads;
}

// max relative error of analytic vs central finite differences over all params
double max_fd_error(DenseNet& net, const VectorXd& x, const VectorXd& probe, int label,
                    double h = 1e-5) {
    LayerGrads ana = probe_grads(net, x, probe, label);
    double worst = 0.0;
    auto check_param = [&](double& theta, double analytic) {
        double saved = theta;
        theta = saved + h;
        double up = probe_loss(net, x, probe, label);
        theta = saved - h;
        double down = probe_loss(net, x, probe, label);
        theta = saved;
        double fd = (up - down) / (2.0 * h);
        double scale = std::max(std::abs(analytic), std::abs(fd));
        if (scale < 1e-7) return;  // both effectively zero (dead ReLU path)
        worst = std::max(worst, std::abs(analytic - fd) / scale);
    };
    for (size_t k = 0; k < net.layers().size(); ++k) {
        Layer& l = net.layers()[k];
        for (int c = 0; c < l.W.cols(); ++c)
            for (int r = 0; r < l.W.rows(); ++r) check_param(l.W(r, c), ana[k].W(r, c));
        for (int r = 0; r < l.b.size(); ++r) check_param(l.b(r), ana[k].b(r));
    }
    return worst;
}

}  // namespace

TEST_CASE("zero weights pass only the final bias through") {
    Rng rng(1);
    DenseNet net({3, 4, 2}, Head::Linear, rng);
    for (Layer& l : net.layers()) l.W.setZero();
    net.layers()[0].b.setZero();
    net.layers()[1].b << 0.75, -2.0;
    VectorXd y = net.forward(VectorXd::Random(3));
    CHECK(y(0) == 0.75);
    CHECK(y(1) == -2.0);
}

TEST_CASE("identity single layer reproduces the input") {
    Rng rng(2);
    DenseNet net({3, 3}, Head::Linear, rng);
    net.layers()[0].W = Eigen::MatrixXd::Identity(3, 3);
    net.layers()[0].b.setZero();
    VectorXd x(3);
    x << -1.5, 0.0, 2.25;
    CHECK(net.forward(x) == x);
}

TEST_CASE("hand two-two-one network matches pencil arithmetic") {
    Rng rng(3);
    DenseNet net({2, 2, 1}, Head::Linear, rng);
    net.layers()[0].W << 1.0, -1.0, 0.5, 2.0;
    net.layers()[0].b << 0.0, -1.0;
    net.layers()[1].W << 1.0, 1.0;
    net.layers()[1].b << 0.5;
    VectorXd x(2);
    x << 1.0, 2.0;
    // pre = (1*1 - 1*2, 0.5*1 + 2*2 - 1) = (-1, 3.5); relu = (0, 3.5); out = 4.0
    VectorXd y = net.forward(x);
    CHECK(y(0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("input size mismatch throws") {
    Rng rng(4);
    DenseNet net({3, 2}, Head::Linear, rng);
    CHECK_THROWS(net.forward(VectorXd::Zero(4)));
    CHECK_THROWS(DenseNet({5}, Head::Linear, rng));
}

TEST_CASE("single linear layer gradient is the outer product") {
    Rng rng(5);
    DenseNet net({3, 2}, Head::Linear, rng);
    VectorXd x(3), g(2);
    x << 0.5, -1.0, 2.0;
    g << 1.0, -3.0;
    DenseNet::Cache cache;
    net.forward(x, cache);
    LayerGrads grads = net.zero_grads();
    VectorXd dx = net.backward(cache, g, grads);
    CHECK(grads[0].W == g * x.transpose());
    CHECK(grads[0].b == g);
    CHECK(dx == net.layers()[0].W.transpose() * g);
}

TEST_CASE("relu blocks the gradient of dead units") {
    Rng rng(6);
    DenseNet net({2, 2, 1}, Head::Linear, rng);
    net.layers()[0].W << 1.0, 0.0, 0.0, 1.0;
    net.layers()[0].b << -10.0, 0.0;  // unit 0 is dead for positive inputs
    net.layers()[1].W << 1.0, 1.0;
    net.layers()[1].b << 0.0;
    VectorXd x(2);
    x << 1.0, 1.0;
    DenseNet::Cache cache;
    net.forward(x, cache);
    LayerGrads grads = net.zero_grads();
    VectorXd one(1);
    one << 1.0;
    net.backward(cache, one, grads);
    CHECK(grads[0].W.row(0).isZero(0.0));
    CHECK(grads[0].b(0) == 0.0);
    CHECK(grads[0].b(1) == 1.0);
}

TEST_CASE("gradients match central finite differences on random networks") {
    Rng rng(20240518);
    double worst = 0.0;
    for (int trial = 0; trial < 12; ++trial) {
        int in = 2 + rng.uniform_int(4);
        int h1 = 3 + rng.uniform_int(6);
        int h2 = 3 + rng.uniform_int(6);
        int out = 2 + rng.uniform_int(4);
        Head head = trial % 2 == 0 ? Head::Linear : Head::Softmax;
        DenseNet net({in, h1, h2, out}, head, rng);
        VectorXd x(in), probe(out);
        for (int i = 0; i < in; ++i) x(i) = rng.uniform(-2.0, 2.0);
        for (int i = 0; i < out; ++i) probe(i) = rng.uniform(-1.0, 1.0);
        int label = rng.uniform_int(out);
        worst = std::max(worst, max_fd_error(net, x, probe, label));
    }
    std::printf("max finite-difference gradient error: %.3e\n", worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("softmax head is a strictly positive distribution") {
    Rng rng(7);
    DenseNet net({4, 16, 5}, Head::Softmax, rng);
    for (int trial = 0; trial < 50; ++trial) {
        VectorXd x(4);
        for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-30.0, 30.0);
        VectorXd y = net.forward(x);
        CHECK(std::abs(y.sum() - 1.0) < 1e-12);
        CHECK(y.minCoeff() > 0.0);
    }
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
    Rng rng(8);
    DenseNet net({3, 4, 2}, Head::Linear, rng);
    DenseNet before = net;
    AdamState adam = make_adam(net, 0.01);
    for (int i = 0; i < 3; ++i) adam_step(net, net.zero_grads(), adam);
    for (size_t k = 0; k < net.layers().size(); ++k) {
        CHECK(net.layers()[k].W == before.layers()[k].W);
        CHECK(net.layers()[k].b == before.layers()[k].b);
    }
}

TEST_CASE("first adam step is roughly a signed step") {
    Rng rng(9);
    DenseNet net({2, 2}, Head::Linear, rng);
    DenseNet before = net;
    AdamState adam = make_adam(net, 0.01);
    LayerGrads grads = net.zero_grads();
    grads[0].W << 5.0, -3.0, 0.25, -0.25;
    grads[0].b << 1.0, -1e3;
    adam_step(net, grads, adam);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            double delta = net.layers()[0].W(r, c) - before.layers()[0].W(r, c);
            double sign = grads[0].W(r, c) > 0 ? 1.0 : -1.0;
            CHECK(delta == doctest::Approx(-0.01 * sign).epsilon(1e-6));
        }
}

TEST_CASE("adam walks a quadratic bowl to its minimum") {
    Rng rng(10);
    DenseNet net({1, 3}, Head::Linear, rng);
    Eigen::MatrixXd target_w(3, 1);
    target_w << 0.3, -1.2, 2.0;
    Eigen::VectorXd target_b(3);
    target_b << -0.4, 0.9, 0.0;
    AdamState adam = make_adam(net, 0.01);
    for (int step = 0; step < 2000; ++step) {
        LayerGrads grads = net.zero_grads();
        grads[0].W = net.layers()[0].W - target_w;
        grads[0].b = net.layers()[0].b - target_b;
        adam_step(net, grads, adam);
    }
    CHECK((net.layers()[0].W - target_w).cwiseAbs().maxCoeff() < 1e-3);
    CHECK((net.layers()[0].b - target_b).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("soft update blends toward the online network") {
    Rng rng(11);
    DenseNet online({2, 3}, Head::Linear, rng);
    DenseNet target({2, 3}, Head::Linear, rng);

    DenseNet copy = target;
    soft_update(copy, online, 1.0);
    CHECK(copy.layers()[0].W == online.layers()[0].W);

    copy = target;
    soft_update(copy, online, 0.0);
    CHECK(copy.layers()[0].W == target.layers()[0].W);

    copy = target;
    for (int i = 0; i < 4000; ++i) soft_update(copy, online, 0.005);
    CHECK((copy.layers()[0].W - online.layers()[0].W).cwiseAbs().maxCoeff() < 1e-6);

    Rng other(12);
    DenseNet mismatched({2, 4}, Head::Linear, other);
    CHECK_THROWS(soft_update(mismatched, online, 0.5));
}

TEST_CASE("identical seeds give bit-identical training trajectories") {
    auto run = [] {
        Rng rng(13);
        DenseNet net({4, 8, 3}, Head::Linear, rng);
        AdamState adam = make_adam(net, 3e-4);
        for (int step = 0; step < 25; ++step) {
            VectorXd x(4), probe(3);
            for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1.0, 1.0);
            for (int i = 0; i < 3; ++i) probe(i) = rng.uniform(-1.0, 1.0);
            DenseNet::Cache cache;
            net.forward(x, cache);
            LayerGrads grads = net.zero_grads();
            net.backward(cache, probe, grads);
            adam_step(net, grads, adam);
        }
        return net;
    };
    DenseNet a = run();
    DenseNet b = run();
    for (size_t k = 0; k < a.layers().size(); ++k) {
        CHECK(a.layers()[k].W == b.layers()[k].W);
        CHECK(a.layers()[k].b == b.layers()[k].b);
    }
}

TEST_CASE("gradient clipping caps the global norm") {
    Rng rng(14);
    DenseNet net({3, 2}, Head::Linear, rng);
    LayerGrads grads = net.zero_grads();
    grads[0].W.setConstant(100.0);
    grads[0].b.setConstant(-100.0);
    clip_grad_norm(grads, 10.0);
    CHECK(grad_norm(grads) == doctest::Approx(10.0).epsilon(1e-12));
    LayerGrads small = net.zero_grads();
    small[0].W.setConstant(0.1);
    double before = grad_norm(small);
    clip_grad_norm(small, 10.0);
    CHECK(grad_norm(small) == before);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Rng rng(15);
    DenseNet net({14, 128, 128, 16}, Head::Softmax, rng);
    auto path = std::filesystem::temp_directory_path() / "v2x_net_roundtrip.bin";
    save_net(net, path.string());
    DenseNet loaded = load_net(path.string());
    CHECK(loaded.sizes() == net.sizes());
    CHECK(loaded.head() == net.head());
    for (size_t k = 0; k < net.layers().size(); ++k) {
        CHECK(loaded.layers()[k].W == net.layers()[k].W);
        CHECK(loaded.layers()[k].b == net.layers()[k].b);
    }
    std::filesystem::remove(path);
    CHECK_THROWS(load_net((std::filesystem::temp_directory_path() / "missing_net.bin").string()));
}
