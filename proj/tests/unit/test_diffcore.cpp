#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "slpt/diffcore/adam.hpp"
#include "slpt/diffcore/checkpoint.hpp"
#include "slpt/diffcore/gradcheck.hpp"
#include "slpt/diffcore/layers.hpp"

using namespace slpt;
using Td = Tensor<double>;

namespace {

Td random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    Td t = Td::matrix(r, c);
    for (auto& x : t.vec()) x = d(rng);
    return t;
}

// Runs gradcheck over `draws` random input sets produced by `make`.
template <class Make>
double worst_over_draws(const ScalarGraphFn<double>& fn, Make make, int draws = 20)
{
    std::mt19937_64 rng(1234);
    double worst = 0;
    for (int k = 0; k < draws; ++k) worst = std::max(worst, gradcheck<double>(fn, make(rng)).worst());
    return worst;
}

} // namespace

TEST(Tensor, ShapeMismatchIsContractViolation)
{
    EXPECT_THROW(Td({2, 2}, std::vector<double>{1, 2, 3}), ContractViolation);
    Td a = Td::matrix(2, 3);
    EXPECT_EQ(a.rows(), 2u);
    EXPECT_EQ(a.cols(), 3u);
    EXPECT_THROW(Td({2, 2, 2}).rows(), ContractViolation);
}

TEST(Backward, SumGradientIsOnes)
{
    ParamStore<double> store;
    store.add("theta", Td({1, 3}, std::vector<double>{0.5, -1, 2}));
    Graph<double> g;
    g.backward(ops::sum(g, g.param(store, "theta")));
    const auto& grad = store.at("theta").grad;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(grad[i], 1.0);
}

TEST(Backward, SquareGradient)
{
    ParamStore<double> store;
    store.add("theta", Td({1, 2}, std::vector<double>{1, 2}));
    Graph<double> g;
    Var t = g.param(store, "theta");
    g.backward(ops::sum(g, ops::mul(g, t, t)));
    EXPECT_DOUBLE_EQ(store.at("theta").grad[0], 2.0);
    EXPECT_DOUBLE_EQ(store.at("theta").grad[1], 4.0);
}

TEST(Backward, NonScalarLossRejected)
{
    Graph<double> g;
    Var x = g.leaf(Td::matrix(2, 2, 1.0));
    EXPECT_THROW(g.backward(x), ContractViolation);
}

TEST(Backward, TapeIsClearedAndSingleUse)
{
    Graph<double> g;
    Var x = g.leaf(Td::matrix(1, 2, 1.0));
    Var l = ops::sum(g, ops::exp(g, x));
    EXPECT_GT(g.tape_size(), 0u);
    g.backward(l);
    EXPECT_EQ(g.tape_size(), 0u);
    EXPECT_THROW(g.backward(l), ContractViolation);
}

TEST(Backward, NonFiniteForwardNamesOp)
{
    Graph<double> g;
    Var x = g.leaf(Td::matrix(1, 1, 1000.0));
    try {
        ops::exp(g, x);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
    }
}

TEST(Backward, NonFiniteGradientNamesOp)
{
    // A tiny row norm overflows the backward division.
    Graph<double> g;
    Var x = g.leaf(Td({1, 2}, std::vector<double>{1e-150, 0}));
    Var y = ops::normalize_rows(g, x);
    Var l = ops::sum(g, ops::scale(g, y, 1e300));
    try {
        g.backward(l);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("normalize_rows"), std::string::npos);
    }
}

TEST(Backward, SharedSubexpressionMatchesUnshared)
{
    std::mt19937_64 rng(7);
    Td x0 = random_matrix(3, 4, rng);
    Graph<double> g1;
    Var a = g1.leaf(x0);
    Var s = ops::silu(g1, a);
    g1.backward(ops::sum(g1, ops::mul(g1, s, s)));

    Graph<double> g2;
    Var b = g2.leaf(x0);
    Var s1 = ops::silu(g2, b);
    Var s2 = ops::silu(g2, b);
    g2.backward(ops::sum(g2, ops::mul(g2, s1, s2)));
    EXPECT_LT(max_abs_diff(*g1.grad_if(a), *g2.grad_if(b)), 1e-14);
}

TEST(Gradcheck, BilinearIsExact)
{
    auto fn = [](Graph<double>& g, const std::vector<Var>& v) { return ops::sum(g, ops::mul(g, v[0], v[1])); };
    auto r = gradcheck<double>(fn, {Td::scalar(2.0), Td::scalar(3.0)});
    EXPECT_LT(r.worst(), 1e-9);
}

TEST(Gradcheck, ExpAtZero)
{
    auto fn = [](Graph<double>& g, const std::vector<Var>& v) { return ops::sum(g, ops::exp(g, v[0])); };
    EXPECT_LT(gradcheck<double>(fn, {Td::scalar(0.0)}).worst(), 1e-9);
}

TEST(Gradcheck, NondeterministicFunctionRejected)
{
    int calls = 0;
    auto fn = [&calls](Graph<double>& g, const std::vector<Var>& v) {
        return ops::scale(g, ops::sum(g, v[0]), 1.0 + 0.1 * ++calls);
    };
    EXPECT_THROW(gradcheck<double>(fn, {Td::scalar(1.0)}), ContractViolation);
}

TEST(Gradcheck, ElementwiseOps)
{
    auto two = [](std::mt19937_64& rng) { return std::vector<Td>{random_matrix(3, 4, rng), random_matrix(3, 4, rng)}; };
    auto one = [](std::mt19937_64& rng) { return std::vector<Td>{random_matrix(3, 4, rng, -2, 2)}; };
    const std::vector<std::pair<const char*, ScalarGraphFn<double>>> binary = {
        {"add", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::add(g, v[0], v[1]), 1); }},
        {"sub", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::sub(g, v[0], v[1]), 2); }},
        {"mul", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::mul(g, v[0], v[1]), 3); }},
        {"weighted_sum",
         [](Graph<double>& g, const std::vector<Var>& v) {
             return random_projection(g, ops::weighted_sum(g, {v[0], v[1]}, {0.3, -1.7}), 4);
         }},
    };
    for (const auto& [name, fn] : binary) EXPECT_LT(worst_over_draws(fn, two), 1e-4) << name;
    const std::vector<std::pair<const char*, ScalarGraphFn<double>>> unary = {
        {"scale", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::scale(g, v[0], 2.5), 5); }},
        {"silu", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::silu(g, v[0]), 6); }},
        {"sigmoid", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::sigmoid(g, v[0]), 7); }},
        {"exp", [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::exp(g, v[0]), 8); }},
        {"clamp",
         [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::clamp(g, v[0], -1.5, 1.5), 9); }},
        {"normalize_rows",
         [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::normalize_rows(g, v[0]), 10); }},
        {"mean_rows",
         [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::mean_rows(g, v[0]), 11); }},
        {"slice_cols",
         [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::slice_cols(g, v[0], 1, 2), 12); }},
        {"gather_rows",
         [](Graph<double>& g, const std::vector<Var>& v) {
             return random_projection(g, ops::gather_rows(g, v[0], {2, 0, 2, 1, 2}), 13);
         }},
        {"broadcast_rows",
         [](Graph<double>& g, const std::vector<Var>& v) {
             return random_projection(g, ops::broadcast_rows(g, ops::slice_cols(g, ops::mean_rows(g, v[0]), 0, 4), 5), 14);
         }},
        {"group_max",
         [](Graph<double>& g, const std::vector<Var>& v) { return random_projection(g, ops::group_max(g, v[0], 3), 15); }},
        {"concat_cols",
         [](Graph<double>& g, const std::vector<Var>& v) {
             return random_projection(g, ops::concat_cols(g, {v[0], ops::exp(g, v[0])}), 16);
         }},
    };
    for (const auto& [name, fn] : unary) EXPECT_LT(worst_over_draws(fn, one), 1e-4) << name;
}

TEST(Gradcheck, LinearAndPooling)
{
    auto lin = [](Graph<double>& g, const std::vector<Var>& v) {
        return random_projection(g, ops::linear(g, v[0], v[1], v[2]), 21);
    };
    auto make_lin = [](std::mt19937_64& rng) {
        return std::vector<Td>{random_matrix(5, 3, rng), random_matrix(3, 4, rng), random_matrix(1, 4, rng)};
    };
    EXPECT_LT(worst_over_draws(lin, make_lin), 1e-4);

    auto pool = [](Graph<double>& g, const std::vector<Var>& v) {
        return random_projection(g, ops::attention_pool(g, v[0], v[1]), 22);
    };
    auto make_pool = [](std::mt19937_64& rng) {
        return std::vector<Td>{random_matrix(6, 1, rng, -2, 2), random_matrix(6, 4, rng)};
    };
    EXPECT_LT(worst_over_draws(pool, make_pool), 1e-4);
}

TEST(Gradcheck, LossOps)
{
    std::mt19937_64 trng(99);
    const Td target = random_matrix(4, 3, trng);
    auto masked = [target](Graph<double>& g, const std::vector<Var>& v) {
        return ops::masked_abs_sum(g, v[0], target, {1, 0, 1, 1}, 7.0);
    };
    auto make = [](std::mt19937_64& rng) { return std::vector<Td>{random_matrix(4, 3, rng)}; };
    EXPECT_LT(worst_over_draws(masked, make), 1e-4);

    auto absdiff = [](Graph<double>& g, const std::vector<Var>& v) { return ops::abs_diff_sum(g, v[0], v[1], 3.0); };
    auto make2 = [](std::mt19937_64& rng) { return std::vector<Td>{random_matrix(4, 3, rng), random_matrix(4, 3, rng)}; };
    EXPECT_LT(worst_over_draws(absdiff, make2), 1e-4);

    auto kl = [](Graph<double>& g, const std::vector<Var>& v) { return ops::kl_standard_normal(g, v[0], v[1]); };
    EXPECT_LT(worst_over_draws(kl, make2), 1e-4);

    std::mt19937_64 nrng(5);
    const Td eps = random_matrix(4, 3, nrng);
    auto rep = [eps](Graph<double>& g, const std::vector<Var>& v) {
        return random_projection(g, ops::reparameterize(g, v[0], v[1], eps), 31);
    };
    EXPECT_LT(worst_over_draws(rep, make2), 1e-4);
}

TEST(Gradcheck, MlpParameters)
{
    std::mt19937_64 rng(3);
    ParamStore<double> store;
    Mlp mlp{"m", {3, 5, 2}};
    mlp.init(store, rng);
    const Td x = random_matrix(4, 3, rng);
    const auto names = std::vector<std::string>{mlp.weight(0), mlp.bias(0), mlp.weight(1), mlp.bias(1)};
    std::vector<Td> inputs;
    for (const auto& n : names) inputs.push_back(store.value(n));
    auto fn = [&](Graph<double>& g, const std::vector<Var>& v) {
        Var h = ops::silu(g, ops::linear(g, g.constant(x), v[0], v[1]));
        return random_projection(g, ops::linear(g, h, v[2], v[3]), 41);
    };
    EXPECT_LT(gradcheck<double>(fn, inputs).worst(), 1e-4);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    ParamStore<double> store;
    store.add("w", Td::scalar(0.5));
    store.at("w").grad[0] = 1.0;
    store.at("w").has_grad = true;
    adam_step(store, AdamConfig{});
    EXPECT_NEAR(store.value("w")[0] - 0.5, -1e-3, 1e-10);
    EXPECT_EQ(store.at("w").step, 1u);
    EXPECT_EQ(store.at("w").grad[0], 0.0);
}

TEST(Adam, ZeroGradientLeavesValue)
{
    ParamStore<double> store;
    store.add("w", Td::scalar(0.5));
    store.at("w").has_grad = true;
    adam_step(store, AdamConfig{});
    EXPECT_EQ(store.value("w")[0], 0.5);
}

TEST(Adam, SecondStepWithConstantGradient)
{
    ParamStore<double> store;
    store.add("w", Td::scalar(0.0));
    double prev = 0;
    std::vector<double> deltas;
    for (int k = 0; k < 2; ++k) {
        store.at("w").grad[0] = 0.3;
        store.at("w").has_grad = true;
        adam_step(store, AdamConfig{});
        deltas.push_back(store.value("w")[0] - prev);
        prev = store.value("w")[0];
    }
    EXPECT_NEAR(std::abs(deltas[1]) / std::abs(deltas[0]), 1.0, 0.01);
}

TEST(Adam, MissingGradientRejected)
{
    ParamStore<double> store;
    store.add("w", Td::scalar(0.0));
    EXPECT_THROW(adam_step(store, AdamConfig{}), ContractViolation);
}

TEST(ParamStore, DuplicateNameRejected)
{
    ParamStore<double> store;
    store.add("w", Td::scalar(0.0));
    EXPECT_THROW(store.add("w", Td::scalar(1.0)), ContractViolation);
}

TEST(Checkpoint, RoundTripWithMoments)
{
    const auto path = std::filesystem::temp_directory_path() / "slpt_ckpt_roundtrip.bin";
    ParamStore<float> store;
    store.add("a/w", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
    store.add("b", Tensor<float>::scalar(-0.25f));
    store.at("a/w").m.fill(0.5f);
    io::save_checkpoint(path, store, true);

    ParamStore<float> other;
    other.add("a/w", Tensor<float>::matrix(2, 3));
    other.add("b", Tensor<float>::scalar(0));
    io::load_checkpoint(path, other);
    EXPECT_EQ(other.value("a/w"), store.value("a/w"));
    EXPECT_EQ(other.value("b"), store.value("b"));
    EXPECT_EQ(other.at("a/w").m[3], 0.5f);

    ParamStore<float> wider;
    wider.add("a/w", Tensor<float>::matrix(2, 3));
    wider.add("c", Tensor<float>::scalar(0));
    EXPECT_THROW(io::load_checkpoint(path, wider), IoError);
    std::filesystem::remove(path);
    EXPECT_THROW(io::load_checkpoint(path, other), IoError);
}

TEST(Checkpoint, HeaderBytes)
{
    const auto path = std::filesystem::temp_directory_path() / "slpt_tensor_header.bin";
    io::write_tensor(path, Tensor<float>({1, 2}, std::vector<float>{1.5f, -2.0f}));
    std::ifstream is(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), {});
    ASSERT_EQ(bytes.size(), 4u + 4 + 8 + 16 + 8);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SLPT");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 2); // rank
    const auto back = io::read_tensor(path);
    EXPECT_EQ(back.shape(), (Shape{1, 2}));
    EXPECT_EQ(back[1], -2.0f);
    std::filesystem::remove(path);
}
