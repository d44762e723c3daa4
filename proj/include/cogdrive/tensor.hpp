#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cogdrive/common.hpp"

namespace cogdrive {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorNode;

/// Dense row-major float64 tensor with an optional autodiff history.
///
/// Tensors are cheap handles; copies share storage. Operations on tensors that
/// require gradients record their parents while grad mode is enabled, and
/// `backward()` on a scalar result accumulates d(result)/d(leaf) into every
/// gradient-requiring leaf reachable from it.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    /// Leaf that accumulates gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Writable storage; only meaningful on leaves (parameters, constants).
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Reverse sweep from this scalar; throws ValidationError when non-scalar.
    void backward() const;

    /// Copy of the values without history.
    Tensor detach() const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    const char* op = "leaf";

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Non-finite values after any op raise RuntimeFailure when enabled.
/// Defaults to on in builds without NDEBUG.
void set_check_finite(bool enabled);
bool check_finite_enabled();

namespace ops {

// Elementwise binary ops: `b` must have the same shape as `a` or a suffix of it
// (leading-batch expansion). No other broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

/// a: [..., m, k]; b: [k, n] (shared) or [..., k, n] with the same leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Gathers rows along axis 0; repeated indices accumulate in backward.
Tensor index_select(const Tensor& a, const std::vector<std::size_t>& rows);

Tensor softmax(const Tensor& a);  // last axis
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor logistic(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor atan2(const Tensor& y, const Tensor& x);

/// Max over one axis; backward routes to the first maximal index.
Tensor max_pool(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);

/// Multi-head scaled dot-product attention.
/// q: [B, Lq, D], k: [B, Lk, D], v: [B, Lk, Dv]; D and Dv divisible by heads.
/// Returns [B, Lq, Dv]; each head attends with its own D/heads slice.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::size_t heads = 1);

}  // namespace ops

/// Named, ordered parameter collection.
class ParamStore {
public:
    Tensor& add(const std::string& name, Shape shape, std::vector<double> values);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.contains(name); }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    std::size_t total_size() const;
    void zero_grad();
    /// Deep copy (new leaves with copied values).
    ParamStore clone() const;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kWeightsFormat = "cogdrive-weights/1";

/// Checkpoint document: metadata object (free-form) plus the parameter list.
void save_weights(const ParamStore& params, const std::string& metadata_json,
                  const std::filesystem::path& path);
std::string dump_weights(const ParamStore& params, const std::string& metadata_json);

struct LoadedWeights {
    std::string metadata_json;
    std::vector<std::pair<std::string, Tensor>> params;
};
LoadedWeights load_weights(const std::filesystem::path& path);
LoadedWeights parse_weights(std::string_view text);

}  // namespace cogdrive
