#include "ucms/errors.hpp"
#include "ucms/tinynet.hpp"
#include "ucms/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace ucms;
using namespace ucms::nn;

namespace {

// Plain nested-loop evaluation of a dense ReLU net, kept apart from Eigen.
std::vector<double> loop_forward(const Mlp& net, std::vector<double> x) {
    const auto& layers = net.params();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& w = layers[l].weight;
        std::vector<double> y(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            double acc = layers[l].bias(i);
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                acc += w(i, j) * x[static_cast<std::size_t>(j)];
            }
            const bool last = l + 1 == layers.size();
            if (!last) {
                acc = acc > 0.0 ? acc : 0.0;
            } else if (net.output_activation() == Activation::Sigmoid) {
                acc = 1.0 / (1.0 + std::exp(-acc));
            }
            y[static_cast<std::size_t>(i)] = acc;
        }
        x = std::move(y);
    }
    return x;
}

} // namespace

TEST(Mlp, ShapesAndInitBounds) {
    Rng rng(1);
    Mlp net({9, 64, 512, 3}, Activation::Relu, Activation::Sigmoid, rng);
    ASSERT_EQ(net.params().size(), 3u);
    EXPECT_EQ(net.params()[0].weight.rows(), 64);
    EXPECT_EQ(net.params()[0].weight.cols(), 9);
    EXPECT_EQ(net.params()[2].weight.rows(), 3);
    EXPECT_EQ(net.parameter_count(), 9u * 64 + 64 + 64 * 512 + 512 + 512 * 3 + 3);
    EXPECT_LE(net.params()[0].weight.cwiseAbs().maxCoeff(), 1.0 / 3.0);
    EXPECT_LE(net.params()[1].weight.cwiseAbs().maxCoeff(), 1.0 / 8.0);
}

TEST(Mlp, ZeroNetGivesZeroOutput) {
    const auto net = Mlp::zeros({4, 8, 8, 2}, Activation::Relu, Activation::Identity);
    EXPECT_EQ(net.forward(Vector(Vector::Ones(4))), Vector::Zero(2));
}

TEST(Mlp, SigmoidHeadStaysInOpenUnitInterval) {
    Rng rng(2);
    Mlp net({5, 16, 16, 3}, Activation::Relu, Activation::Sigmoid, rng);
    const Matrix out = net.forward(Matrix(Matrix::Random(5, 200)));
    EXPECT_GT(out.minCoeff(), 0.0);
    EXPECT_LT(out.maxCoeff(), 1.0);
}

TEST(Mlp, MatchesLoopRecomputation) {
    Rng rng(3);
    for (auto out_act : {Activation::Identity, Activation::Sigmoid}) {
        Mlp net({6, 64, 512, 2}, Activation::Relu, out_act, rng);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> x(6);
        for (auto& v : x) {
            v = u(rng);
        }
        const auto expected = loop_forward(net, x);
        const Vector got = net.forward(Vector(Eigen::Map<const Vector>(x.data(), 6)));
        for (int i = 0; i < 2; ++i) {
            EXPECT_NEAR(got(i), expected[static_cast<std::size_t>(i)], 1e-12);
        }
    }
}

TEST(Mlp, ForwardIsDeterministicAndCounted) {
    Rng rng(4);
    Mlp net({3, 8, 8, 1}, Activation::Relu, Activation::Identity, rng);
    const Vector x = Vector::Constant(3, 0.3);
    const auto before = net.forward_count();
    EXPECT_EQ(net.forward(x), net.forward(x));
    EXPECT_EQ(net.forward_count(), before + 2);
}

TEST(Mlp, WrongInputSizeIsStructural) {
    Rng rng(5);
    Mlp net({3, 8, 8, 1}, Activation::Relu, Activation::Identity, rng);
    EXPECT_THROW(net.forward(Vector(Vector::Zero(4))), StructuralError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(6);
    Mlp net({4, 16, 16, 2}, Activation::Relu, Activation::Identity, rng);
    const auto tape = net.forward_tape(Matrix::Random(4, 5));
    Matrix input_grad;
    const auto g = net.backward(tape, Matrix::Zero(2, 5), &input_grad);
    EXPECT_EQ(squared_norm(g), 0.0);
    EXPECT_EQ(input_grad.norm(), 0.0);
}

TEST(Backward, MatchesFiniteDifferencesOnDeployedShapes) {
    const auto shapes = verify::deployed_shapes(EnvConfig{}, {64, 512});
    for (const auto& s : shapes) {
        verify::GradCheckOptions opts;
        opts.nets = 10;
        opts.sampled_params = 300;
        const auto r = verify::gradient_check(s.widths, s.hidden, s.output, 21, opts);
        EXPECT_TRUE(r.passed) << s.name << ": " << r.detail;
    }
}

TEST(Backward, DirectionalInputDerivative) {
    Rng rng(7);
    Mlp net({5, 32, 32, 1}, Activation::Relu, Activation::Identity, rng);
    Vector x = Vector::Random(5);
    const Vector dir = Vector::Random(5).normalized();
    const auto tape = net.forward_tape(x);
    Matrix gin;
    net.backward(tape, Matrix::Ones(1, 1), &gin);
    const double h = 1e-6;
    const double fd = (net.forward(Vector(x + h * dir))(0) - net.forward(Vector(x - h * dir))(0)) / (2 * h);
    EXPECT_NEAR(gin.col(0).dot(dir), fd, 1e-6 * std::max(1.0, std::abs(fd)));
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Rng rng(8);
    Mlp net({2, 4, 4, 1}, Activation::Relu, Activation::Identity, rng);
    const auto before = net.params();
    Adam opt(net, {});
    opt.step(net, zeros_like(net.params()));
    for (std::size_t l = 0; l < before.size(); ++l) {
        EXPECT_EQ(net.params()[l].weight, before[l].weight);
        EXPECT_EQ(net.params()[l].bias, before[l].bias);
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    auto net = Mlp::zeros({1, 1}, Activation::Relu, Activation::Identity);
    Adam opt(net, {0.1, 0.9, 0.999, 1e-8});
    auto g = zeros_like(net.params());
    g[0].weight(0, 0) = 1.0;
    opt.step(net, g);
    EXPECT_NEAR(net.params()[0].weight(0, 0), -0.1, 1e-8);
    EXPECT_EQ(net.params()[0].bias(0), 0.0);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, QuadraticLossDecreases) {
    auto net = Mlp::zeros({3, 2}, Activation::Relu, Activation::Identity);
    net.params()[0].weight.setConstant(2.0);
    net.params()[0].bias.setConstant(-1.5);
    Adam opt(net, {0.01, 0.9, 0.999, 1e-8});
    auto loss = [&] { return squared_norm(net.params()); };
    double prev = loss();
    for (int i = 0; i < 100; ++i) {
        auto g = net.params();
        for (auto& l : g) {
            l.weight *= 2.0;
            l.bias *= 2.0;
        }
        opt.step(net, g);
        const double now = loss();
        EXPECT_LT(now, prev);
        prev = now;
    }
}

TEST(Adam, NonFiniteGradientThrowsAndKeepsParameters) {
    Rng rng(9);
    Mlp net({2, 3, 1}, Activation::Relu, Activation::Identity, rng);
    const auto before = net.params();
    Adam opt(net, {});
    auto g = zeros_like(net.params());
    g[1].bias(0) = std::nan("");
    EXPECT_THROW(opt.step(net, g), TrainingError);
    EXPECT_EQ(net.params()[0].weight, before[0].weight);
    EXPECT_EQ(opt.steps(), 0);
}

TEST(SoftUpdate, BlendRule) {
    auto target = Mlp::zeros({2, 2}, Activation::Relu, Activation::Identity);
    auto online = Mlp::zeros({2, 2}, Activation::Relu, Activation::Identity);
    online.params()[0].weight.setOnes();
    online.params()[0].bias.setOnes();
    soft_update(target, online, 0.01);
    EXPECT_DOUBLE_EQ(target.params()[0].weight(1, 0), 0.01);
    soft_update(target, online, 1.0);
    EXPECT_EQ(target.params()[0].weight, online.params()[0].weight);
}

TEST(SoftUpdate, ConvergesGeometrically) {
    auto target = Mlp::zeros({1, 1}, Activation::Relu, Activation::Identity);
    auto online = Mlp::zeros({1, 1}, Activation::Relu, Activation::Identity);
    online.params()[0].weight(0, 0) = 1.0;
    for (int k = 1; k <= 200; ++k) {
        soft_update(target, online, 0.05);
        EXPECT_NEAR(1.0 - target.params()[0].weight(0, 0), std::pow(0.95, k), 1e-12);
    }
    EXPECT_TRUE(target.all_finite());
}

TEST(SoftUpdate, RejectsBadOmegaAndShape) {
    auto a = Mlp::zeros({1, 1}, Activation::Relu, Activation::Identity);
    auto b = Mlp::zeros({2, 1}, Activation::Relu, Activation::Identity);
    EXPECT_ANY_THROW(soft_update(a, a, 0.0));
    EXPECT_ANY_THROW(soft_update(a, b, 0.5));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(10);
    Mlp actor({9, 64, 512, 3}, Activation::Relu, Activation::Sigmoid, rng);
    Mlp critic({48, 64, 512, 1}, Activation::Relu, Activation::Identity, rng);
    std::stringstream buf;
    save_checkpoint(buf, {{"actor_0", &actor}, {"critic_0", &critic}});
    const auto loaded = load_checkpoint(buf);
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].name, "actor_0");
    EXPECT_EQ(loaded[1].net.widths(), critic.widths());
    EXPECT_EQ(loaded[0].net.output_activation(), Activation::Sigmoid);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(loaded[0].net.params()[l].weight, actor.params()[l].weight);
        EXPECT_EQ(loaded[1].net.params()[l].bias, critic.params()[l].bias);
    }
}

TEST(Checkpoint, TruncatedStreamFails) {
    Rng rng(11);
    Mlp net({3, 4, 1}, Activation::Relu, Activation::Identity, rng);
    std::stringstream buf;
    save_checkpoint(buf, {{"n", &net}});
    std::string bytes = buf.str();
    bytes.resize(bytes.size() - 8);
    std::stringstream cut(bytes);
    EXPECT_ANY_THROW(load_checkpoint(cut));
}
