#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "cogdrive/tensor.hpp"

using namespace cogdrive;
using namespace cogdrive::ops;

namespace {

Tensor random_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::parameter(std::move(shape), std::move(v));
}

// Central differences of a scalar function against backward() for every input.
void expect_gradients(const std::vector<Tensor>& inputs, const std::function<Tensor()>& f, double tol = 1e-6) {
    for (const auto& t : inputs) t.node()->grad.clear();
    f().backward();
    const double h = 1e-6;
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        Tensor t = inputs[n];
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        analytic.resize(t.numel(), 0.0);
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            double up, down;
            {
                NoGradGuard g;
                up = f().item();
            }
            data[i] = keep - h;
            {
                NoGradGuard g;
                down = f().item();
            }
            data[i] = keep;
            const double numeric = (up - down) / (2 * h);
            EXPECT_NEAR(analytic[i], numeric, tol * std::max(1.0, std::abs(numeric)))
                << "input " << n << " element " << i;
        }
    }
}

}  // namespace

TEST(Tensor, ElementwiseAndBroadcastGradients) {
    std::mt19937_64 rng(1);
    Tensor a = random_param({3, 4}, rng), b = random_param({4}, rng), c = random_param({3, 4}, rng, 0.5, 2.0);
    expect_gradients({a, b, c}, [&] { return sum(div(mul(add(a, b), sub(a, b)), c)); });
    expect_gradients({a}, [&] { return mean(add_scalar(scale(a, 3.0), 2.0)); });
}

TEST(Tensor, MatmulBatchedAndShared) {
    std::mt19937_64 rng(2);
    Tensor a = random_param({2, 3, 4}, rng), w = random_param({4, 5}, rng), bw = random_param({2, 4, 5}, rng);
    expect_gradients({a, w}, [&] { return sum(mul(matmul(a, w), matmul(a, w))); });
    expect_gradients({a, bw}, [&] { return sum(tanh(matmul(a, bw))); });
    expect_gradients({a}, [&] { return sum(mul(transpose(a), transpose(a))); });
}

TEST(Tensor, MatmulValues) {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Tensor, NonlinearitiesAndNormalisation) {
    std::mt19937_64 rng(3);
    Tensor a = random_param({2, 5}, rng), g = random_param({5}, rng), b = random_param({5}, rng);
    Tensor pos = random_param({2, 5}, rng, 0.3, 2.0);
    expect_gradients({a}, [&] { return sum(mul(softmax(a), a)); });
    expect_gradients({a, g, b}, [&] { return sum(mul(layer_norm(a, g, b), a)); }, 1e-5);
    expect_gradients({a}, [&] { return sum(add(logistic(a), exp(a))); });
    expect_gradients({pos}, [&] { return sum(sqrt(pos)); });
    expect_gradients({a, pos}, [&] { return sum(atan2(a, pos)); });
}

TEST(Tensor, ReluAwayFromKink) {
    Tensor a = Tensor::parameter({4}, {-1.0, -0.2, 0.3, 2.0});
    expect_gradients({a}, [&] { return sum(mul(relu(a), a)); });
}

TEST(Tensor, ShapeOpsGradients) {
    std::mt19937_64 rng(4);
    Tensor a = random_param({3, 4}, rng), b = random_param({2, 4}, rng);
    expect_gradients({a, b}, [&] {
        Tensor c = concat({a, b}, 0);                      // [5, 4]
        Tensor s = slice(c, 1, 1, 3);                      // [5, 2]
        Tensor r = reshape(s, {2, 5});
        Tensor idx = index_select(a, {2, 0, 2});           // repeated index
        return add(sum(mul(r, r)), sum(mul(idx, idx)));
    });
    expect_gradients({a}, [&] { return sum(mul(sum(a, 1), sum(a, 1))); });
}

TEST(Tensor, MaxPoolRoutesToFirstMaximum) {
    Tensor a = Tensor::parameter({3, 2}, {1.0, 5.0, 3.0, 5.0, 3.0, -1.0});
    Tensor m = max_pool(a, 0);
    EXPECT_EQ(m[0], 3.0);
    EXPECT_EQ(m[1], 5.0);
    sum(m).backward();
    std::vector<double> g(a.grad().begin(), a.grad().end());
    EXPECT_EQ(g, (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

TEST(Tensor, AttentionGradients) {
    std::mt19937_64 rng(5);
    Tensor q = random_param({2, 3, 4}, rng), k = random_param({2, 5, 4}, rng), v = random_param({2, 5, 4}, rng);
    expect_gradients({q, k, v}, [&] {
        Tensor o = scaled_dot_product_attention(q, k, v, 2);
        return sum(mul(o, o));
    });
}

TEST(Tensor, AttentionHeadsAreIndependent) {
    // With one head the output is a convex combination of the value rows.
    Tensor q = Tensor::from({1, 1, 2}, {0.0, 0.0});
    Tensor k = Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor v = Tensor::from({1, 2, 2}, {2.0, 0.0, 0.0, 4.0});
    Tensor o = scaled_dot_product_attention(q, k, v, 1);
    EXPECT_DOUBLE_EQ(o[0], 1.0);
    EXPECT_DOUBLE_EQ(o[1], 2.0);
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
    Tensor a = Tensor::parameter({1}, {3.0});
    sum(mul(a, a)).backward();
    sum(mul(a, a)).backward();
    EXPECT_DOUBLE_EQ(a.grad()[0], 12.0);
    a.zero_grad();
    EXPECT_TRUE(a.grad().empty() || a.grad()[0] == 0.0);
}

TEST(Tensor, BackwardNeedsScalar) {
    Tensor a = Tensor::parameter({2}, {1.0, 2.0});
    EXPECT_THROW(mul(a, a).backward(), ValidationError);
}

TEST(Tensor, ShapeMismatchIsRejected) {
    Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2});
    EXPECT_THROW(add(a, b), ValidationError);
    EXPECT_THROW(matmul(a, Tensor::zeros({2, 2})), ValidationError);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
    Tensor a = Tensor::parameter({2}, {1.0, 2.0});
    NoGradGuard g;
    Tensor b = mul(a, a);
    EXPECT_FALSE(b.requires_grad());
    EXPECT_FALSE(grad_enabled());
}

TEST(Tensor, NonFiniteCheck) {
    const bool was = check_finite_enabled();
    set_check_finite(true);
    EXPECT_THROW(sqrt(Tensor::from({1}, {-1.0})), RuntimeFailure);
    set_check_finite(was);
}

TEST(Tensor, WeightsRoundTripExactly) {
    std::mt19937_64 rng(6);
    ParamStore p;
    p.add("a", {2, 3}, {0.1, -1e-300, 3.0, 1.0 / 3.0, 2e10, -0.0});
    p.add("b", {1}, {std::nextafter(1.0, 2.0)});
    LoadedWeights w = parse_weights(dump_weights(p, R"({"note":"x"})"));
    ASSERT_EQ(w.params.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(w.params[i].first, p.items()[i].first);
        EXPECT_EQ(w.params[i].second.shape(), p.items()[i].second.shape());
        for (std::size_t j = 0; j < w.params[i].second.numel(); ++j)
            EXPECT_EQ(w.params[i].second[j], p.items()[i].second[j]);
    }
    EXPECT_NE(w.metadata_json.find("note"), std::string::npos);
}

TEST(Tensor, WeightsRejectBadDocuments) {
    EXPECT_THROW(parse_weights("{}"), ValidationError);
    EXPECT_THROW(parse_weights("not json"), ValidationError);
    EXPECT_THROW(parse_weights(R"({"format":"cogdrive-weights/1","metadata":{},"params":[{"name":"a","shape":[2],"values":[1]}]})"),
                 ValidationError);
}

TEST(Tensor, CloneIsDeep) {
    ParamStore p;
    p.add("a", {1}, {1.0});
    ParamStore q = p.clone();
    q.items()[0].second.mutable_data()[0] = 5.0;
    EXPECT_EQ(p.get("a")[0], 1.0);
}
