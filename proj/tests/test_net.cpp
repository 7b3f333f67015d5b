#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cfbench/net.hpp"

using namespace cfbench;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.v) v = scale * rng.normal();
    return t;
}

// L(x) = sum g_i out_i for a fixed random functional g; finite differences
// on L pin every gradient the backward pass produces.
struct FdCheck {
    const Network& net;
    Tensor g;  // functional weights, same shape as output

    double value(const Tensor& x) const {
        Tensor out = forward(net, x);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) acc += g.v[i] * out.v[i];
        return acc;
    }
};

double rel_err(double a, double b) {
    double denom = std::max({std::abs(a), std::abs(b), 1e-3});
    return std::abs(a - b) / denom;
}

// checks input gradient and every parameter gradient of every layer
void check_gradients(Network& net, const Tensor& x, Rng& rng, double tol = 1e-6) {
    std::vector<LayerCache> caches;
    Tensor out = forward(net, x, &caches);
    Tensor g = random_tensor(out.shape, rng);
    NetGrads grads = zero_grads(net);
    Tensor din = backward(net, caches, g, &grads);
    FdCheck fd{net, g};

    const double h = 1e-5;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        xp.v[i] = x.v[i] + h;
        double up = fd.value(xp);
        xp.v[i] = x.v[i] - h;
        double dn = fd.value(xp);
        xp.v[i] = x.v[i];
        double numeric = (up - dn) / (2.0 * h);
        ASSERT_LT(rel_err(din.v[i], numeric), tol) << "input grad at " << i;
    }
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto check_param = [&](std::vector<double>& p, const std::vector<double>& analytic,
                               const char* tag) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                double keep = p[i];
                p[i] = keep + h;
                double up = fd.value(x);
                p[i] = keep - h;
                double dn = fd.value(x);
                p[i] = keep;
                double numeric = (up - dn) / (2.0 * h);
                ASSERT_LT(rel_err(analytic[i], numeric), tol)
                    << tag << " layer " << li << " index " << i;
            }
        };
        check_param(net.layers[li].w, grads.layers[li].w, "w");
        check_param(net.layers[li].b, grads.layers[li].b, "b");
        check_param(net.layers[li].w2, grads.layers[li].w2, "w2");
        check_param(net.layers[li].b2, grads.layers[li].b2, "b2");
    }
}

}  // namespace

TEST(Forward, EmptyNetworkIsIdentity) {
    Network net;
    Rng rng(1);
    Tensor x = random_tensor({2, 3, 3}, rng);
    Tensor y = forward(net, x);
    EXPECT_EQ(x.v, y.v);
}

TEST(Forward, ReluClampsNegatives) {
    Network net;
    net.layers.push_back(Layer::relu());
    Tensor x({3});
    x.v = {-1.0, 0.0, 2.0};
    Tensor y = forward(net, x);
    EXPECT_EQ(y.v, (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Forward, OneByOneConvIsAffine) {
    Network net;
    Layer c = Layer::conv2d(1, 1, 1, 1);
    c.w = {2.0};
    c.b = {1.0};
    net.layers.push_back(c);
    Tensor x({1, 1, 1});
    x.v = {3.0};
    Tensor y = forward(net, x);
    EXPECT_DOUBLE_EQ(y.v[0], 7.0);
}

TEST(Forward, ShapeMismatchNamesLayer) {
    Network net;
    net.layers.push_back(Layer::conv2d(2, 4, 3, 3));
    Tensor x({1, 8, 8});
    try {
        forward(net, x);
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }
}

TEST(Forward, MaxPoolTiesPickLowestIndex) {
    Network net;
    net.layers.push_back(Layer::maxpool(2));
    Tensor x({1, 2, 2});
    x.v = {5.0, 5.0, 5.0, 5.0};
    std::vector<LayerCache> caches;
    Tensor y = forward(net, x, &caches);
    ASSERT_EQ(y.numel(), 1u);
    EXPECT_EQ(y.v[0], 5.0);
    EXPECT_EQ(caches[0].idx[0], 0);  // first element wins the tie
}

TEST(Forward, HardmaxEmitsOneHotLowestIndexTie) {
    Network net;
    net.layers.push_back(Layer::hardmax_channels());
    Tensor x({3, 1, 2});
    // site 0: channel 1 wins; site 1: tie between channels 0 and 2
    x.at(0, 0, 0) = 0.5;
    x.at(1, 0, 0) = 2.0;
    x.at(2, 0, 0) = -1.0;
    x.at(0, 0, 1) = 7.0;
    x.at(1, 0, 1) = 1.0;
    x.at(2, 0, 1) = 7.0;
    Tensor y = forward(net, x);
    EXPECT_EQ(y.at(0, 0, 0), 0.0);
    EXPECT_EQ(y.at(1, 0, 0), 1.0);
    EXPECT_EQ(y.at(2, 0, 0), 0.0);
    EXPECT_EQ(y.at(0, 0, 1), 1.0);
    EXPECT_EQ(y.at(2, 0, 1), 0.0);
}

TEST(Forward, SoftmaxSharpensTowardHardmaxAsTemperatureDrops) {
    Tensor x({4});
    x.v = {0.3, 1.1, -0.2, 0.9};
    double prev_gap = 1.0;
    for (double tau : {1.0, 0.1, 0.01}) {
        Network net;
        net.layers.push_back(Layer::softmax_channels(tau));
        Tensor y = forward(net, x);
        double gap = 1.0 - y.v[1];  // channel 1 is the argmax
        EXPECT_LT(gap, prev_gap);
        prev_gap = gap;
    }
}

TEST(Backward, HardmaxIsUnsupported) {
    Network net;
    net.layers.push_back(Layer::hardmax_channels());
    Tensor x({2, 2, 2});
    std::vector<LayerCache> caches;
    Tensor y = forward(net, x, &caches);
    EXPECT_THROW(backward(net, caches, y, nullptr), UnsupportedOperation);
}

TEST(Backward, LinearLayerInputGradientIsWeights) {
    Network net;
    Layer fc = Layer::fully_connected(4, 1);
    fc.w = {0.5, -1.5, 2.0, 0.25};
    fc.b = {0.0};
    net.layers.push_back(fc);
    Tensor x({4});
    x.v = {1.0, 2.0, 3.0, 4.0};
    std::vector<LayerCache> caches;
    forward(net, x, &caches);
    Tensor up({1});
    up.v = {1.0};
    Tensor din = backward(net, caches, up, nullptr);
    EXPECT_EQ(din.v, fc.w);
}

TEST(Backward, ZeroGradientOutsideReceptiveField) {
    Network net;
    Layer c = Layer::conv2d(1, 1, 3, 3);
    Rng rng(3);
    init_he_normal(c, rng);
    net.layers.push_back(c);
    Tensor x = random_tensor({1, 5, 5}, rng);
    std::vector<LayerCache> caches;
    Tensor out = forward(net, x, &caches);
    Tensor up(out.shape);  // hit only output (0,0); its field is rows/cols 0..2
    up.at(0, 0, 0) = 1.0;
    Tensor din = backward(net, caches, up, nullptr);
    EXPECT_EQ(din.at(0, 4, 4), 0.0);
    EXPECT_EQ(din.at(0, 0, 3), 0.0);
    EXPECT_NE(din.at(0, 1, 1), 0.0);
}

TEST(GradCheck, Conv2dValid) {
    Rng rng(11);
    Network net;
    Layer c = Layer::conv2d(2, 3, 3, 3);
    init_he_normal(c, rng);
    for (double& v : c.b) v = 0.1 * rng.normal();
    net.layers.push_back(c);
    Tensor x = random_tensor({2, 5, 5}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, Conv2dStridedPadded) {
    Rng rng(13);
    Network net;
    Layer c = Layer::conv2d(1, 2, 3, 3, 2, 1);
    init_he_normal(c, rng);
    net.layers.push_back(c);
    Tensor x = random_tensor({1, 6, 6}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, MaxPool) {
    Rng rng(17);
    Network net;
    net.layers.push_back(Layer::maxpool(2));
    Tensor x = random_tensor({2, 6, 6}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, GlobalAvgPool) {
    Rng rng(19);
    Network net;
    net.layers.push_back(Layer::global_avgpool());
    Tensor x = random_tensor({3, 4, 5}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, Relu) {
    Rng rng(23);
    Network net;
    net.layers.push_back(Layer::relu());
    Tensor x = random_tensor({2, 4, 4}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, FullyConnected) {
    Rng rng(29);
    Network net;
    Layer fc = Layer::fully_connected(12, 5);
    init_he_normal(fc, rng);
    for (double& v : fc.b) v = 0.1 * rng.normal();
    net.layers.push_back(fc);
    Tensor x = random_tensor({12}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, SoftmaxVectorAndChannels) {
    Rng rng(31);
    {
        Network net;
        net.layers.push_back(Layer::softmax_channels(0.7));
        Tensor x = random_tensor({6}, rng);
        check_gradients(net, x, rng);
    }
    {
        Network net;
        net.layers.push_back(Layer::softmax_channels(1.3));
        Tensor x = random_tensor({4, 3, 3}, rng);
        check_gradients(net, x, rng);
    }
}

TEST(GradCheck, ResidualBlock) {
    Rng rng(37);
    Network net;
    Layer rb = Layer::residual_block(3, 3);
    init_he_normal(rb, rng);
    net.layers.push_back(rb);
    Tensor x = random_tensor({3, 5, 5}, rng);
    check_gradients(net, x, rng);
}

TEST(GradCheck, StackedNetwork) {
    Rng rng(41);
    Network net;
    Layer c1 = Layer::conv2d(1, 3, 3, 3);
    init_he_normal(c1, rng);
    net.layers.push_back(c1);
    net.layers.push_back(Layer::relu());
    net.layers.push_back(Layer::maxpool(2));
    net.layers.push_back(Layer::global_avgpool());
    Layer fc = Layer::fully_connected(3, 2);
    init_he_normal(fc, rng);
    net.layers.push_back(fc);
    Tensor x = random_tensor({1, 8, 8}, rng);
    check_gradients(net, x, rng);
}

TEST(Loss, CrossEntropyMatchesFiniteDifference) {
    Rng rng(43);
    Tensor logits = random_tensor({3}, rng);
    Tensor dout;
    double l0 = loss_and_grad(LossKind::SoftmaxCrossEntropy, logits, 1, &dout);
    EXPECT_GT(l0, 0.0);
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        Tensor lp = logits;
        lp.v[i] += h;
        double up = loss_and_grad(LossKind::SoftmaxCrossEntropy, lp, 1, nullptr);
        lp.v[i] -= 2 * h;
        double dn = loss_and_grad(LossKind::SoftmaxCrossEntropy, lp, 1, nullptr);
        EXPECT_LT(rel_err(dout.v[i], (up - dn) / (2 * h)), 1e-5);
    }
}

TEST(Loss, HingeActiveRegion) {
    Tensor out({1});
    out.v = {0.3};
    Tensor dout;
    double l = loss_and_grad(LossKind::Hinge, out, 1, &dout);
    EXPECT_DOUBLE_EQ(l, 0.7);
    EXPECT_DOUBLE_EQ(dout.v[0], -1.0);
    out.v = {1.5};
    l = loss_and_grad(LossKind::Hinge, out, 1, &dout);
    EXPECT_DOUBLE_EQ(l, 0.0);
    EXPECT_DOUBLE_EQ(dout.v[0], 0.0);
}

TEST(InputGradient, LinearHingeGivesSignedWeights) {
    Network net;
    Layer fc = Layer::fully_connected(3, 1);
    fc.w = {0.2, -0.4, 1.0};
    net.layers.push_back(fc);
    net.loss = LossKind::Hinge;
    Tensor x({3});
    x.v = {0.1, 0.1, 0.1};  // score 0.08, margin active for both labels
    Tensor g1 = input_gradient(net, x, 1);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g1.v[i], -fc.w[i]);
    Tensor g0 = input_gradient(net, x, 0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g0.v[i], fc.w[i]);
}

TEST(Sgd, PlainStep) {
    Network net;
    Layer fc = Layer::fully_connected(1, 1);
    net.layers.push_back(fc);
    NetGrads g = zero_grads(net);
    g.layers[0].w[0] = 1.0;
    SgdState st;
    sgd_step(net, g, 0.1, 0.0, st);
    EXPECT_DOUBLE_EQ(net.layers[0].w[0], -0.1);
}

TEST(Sgd, MomentumMatchesHandUnrolledRecurrence) {
    Network net;
    Layer fc = Layer::fully_connected(1, 1);
    net.layers.push_back(fc);
    SgdState st;
    NetGrads g = zero_grads(net);
    g.layers[0].w[0] = 2.0;
    sgd_step(net, g, 0.1, 0.9, st);
    g.layers[0].w[0] = -1.0;
    sgd_step(net, g, 0.1, 0.9, st);
    // v1 = -0.1*2 = -0.2, w1 = -0.2; v2 = 0.9*(-0.2) + 0.1 = -0.08, w2 = -0.28
    EXPECT_NEAR(net.layers[0].w[0], -0.28, 1e-15);
}

TEST(Sgd, ZeroGradientLeavesParametersUnchanged) {
    Network net;
    Layer fc = Layer::fully_connected(2, 2);
    Rng rng(47);
    init_he_normal(fc, rng);
    net.layers.push_back(fc);
    auto w0 = net.layers[0].w;
    NetGrads g = zero_grads(net);
    SgdState st;
    sgd_step(net, g, 0.5, 0.9, st);
    EXPECT_EQ(net.layers[0].w, w0);
}

TEST(Sgd, NonFiniteGradientDiverges) {
    Network net;
    net.layers.push_back(Layer::fully_connected(1, 1));
    NetGrads g = zero_grads(net);
    g.layers[0].w[0] = std::numeric_limits<double>::quiet_NaN();
    SgdState st;
    EXPECT_THROW(sgd_step(net, g, 0.1, 0.0, st), TrainingDiverged);
}

TEST(Projection, IdempotentOnSatisfyingKernel) {
    // off-center sum exactly representable: 8 entries of 1/8
    std::vector<double> k(25, 0.0);
    for (std::size_t i = 0; i < 8; ++i) k[i] = 0.125;
    k[12] = -1.0;
    auto k0 = k;
    project_constrained_kernel(k, 5, 5);
    EXPECT_EQ(k, k0);
    // general case: projecting twice moves nothing beyond rounding noise
    std::vector<double> g(25, 1.0 / 24.0);
    g[12] = -1.0;
    project_constrained_kernel(g, 5, 5);
    auto g1 = g;
    project_constrained_kernel(g, 5, 5);
    for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(g[i], g1[i], 1e-15);
    double sum = 0.0;
    for (std::size_t i = 0; i < 25; ++i)
        if (i != 12) sum += g[i];
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(g[12], -1.0);
}

TEST(Projection, UniformOffCenter) {
    std::vector<double> k(25, 2.0);
    project_constrained_kernel(k, 5, 5);
    EXPECT_DOUBLE_EQ(k[12], -1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < 25; ++i)
        if (i != 12) {
            EXPECT_DOUBLE_EQ(k[i], 1.0 / 24.0);
            sum += k[i];
        }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Projection, NegativeSumFlipsSigns) {
    std::vector<double> k(25, 0.0);
    // off-center entries: two at -2, rest 0 -> sum -4
    k[0] = -2.0;
    k[1] = -2.0;
    k[12] = 5.0;
    project_constrained_kernel(k, 5, 5);
    EXPECT_DOUBLE_EQ(k[0], 0.5);
    EXPECT_DOUBLE_EQ(k[1], 0.5);
    EXPECT_DOUBLE_EQ(k[12], -1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < 25; ++i)
        if (i != 12) sum += k[i];
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Projection, DegenerateSumThrows) {
    std::vector<double> k(25, 0.0);
    k[12] = 3.0;
    EXPECT_THROW(project_constrained_kernel(k, 5, 5), DegenerateKernel);
}

TEST(Serialization, NetworkRoundTripsBitExact) {
    Rng rng(53);
    Network net;
    Layer c = Layer::conv2d(1, 4, 3, 3, 1, 1);
    init_he_normal(c, rng);
    net.layers.push_back(c);
    net.layers.push_back(Layer::relu());
    net.layers.push_back(Layer::maxpool(2));
    Layer rb = Layer::residual_block(4);
    init_he_normal(rb, rng);
    net.layers.push_back(rb);
    net.layers.push_back(Layer::global_avgpool());
    Layer fc = Layer::fully_connected(4, 2);
    init_he_normal(fc, rng);
    net.layers.push_back(fc);
    net.loss = LossKind::Hinge;

    std::stringstream ss;
    save_network(ss, net);
    Network back = load_network(ss);
    ASSERT_EQ(back.layers.size(), net.layers.size());
    EXPECT_EQ(back.loss, net.loss);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        EXPECT_EQ(back.layers[i].kind, net.layers[i].kind);
        EXPECT_EQ(back.layers[i].w, net.layers[i].w);
        EXPECT_EQ(back.layers[i].b, net.layers[i].b);
        EXPECT_EQ(back.layers[i].w2, net.layers[i].w2);
    }
    Tensor x = random_tensor({1, 8, 8}, rng);
    EXPECT_EQ(forward(net, x).v, forward(back, x).v);
}

TEST(Serialization, TruncatedFileReportsOffset) {
    Rng rng(59);
    Network net;
    Layer fc = Layer::fully_connected(4, 2);
    init_he_normal(fc, rng);
    net.layers.push_back(fc);
    std::stringstream ss;
    save_network(ss, net);
    std::string blob = ss.str();
    std::stringstream cut(blob.substr(0, blob.size() / 2));
    EXPECT_THROW(load_network(cut), ParseError);
}

TEST(Determinism, ForwardIsBitStable) {
    Rng rng(61);
    Network net;
    Layer c = Layer::conv2d(2, 3, 3, 3);
    init_he_normal(c, rng);
    net.layers.push_back(c);
    net.layers.push_back(Layer::softmax_channels(0.5));
    Tensor x = random_tensor({2, 6, 6}, rng);
    EXPECT_EQ(forward(net, x).v, forward(net, x).v);
}
