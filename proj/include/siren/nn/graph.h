#pragma once

#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "siren/nn/parameter.h"
#include "siren/nn/tensor.h"

namespace siren::nn {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. A graph is built for one forward pass and discarded;
// node values are immutable once recorded.
template <typename T>
class BasicGraph {
public:
    using TensorT = BasicTensor<T>;
    // Invoked as fn(graph, self) where self is the node being differentiated.
    using BackwardFn = std::function<void(BasicGraph&, Var)>;

    explicit BasicGraph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    BasicGraph(const BasicGraph&) = delete;
    BasicGraph& operator=(const BasicGraph&) = delete;

    Var constant(TensorT value) {
        Node n;
        n.value = std::move(value);
        return push(std::move(n));
    }

    // Non-owning view of a tensor that outlives the graph; never receives gradient.
    Var view(const TensorT& value) {
        Node n;
        n.ref = &value;
        return push(std::move(n));
    }

    // Trainable leaf. On backward, the node gradient is added into p.grad.
    Var param(BasicParameter<T>& p) {
        Node n;
        n.ref = &p.value;
        n.param = &p;
        n.requires_grad = grad_enabled_;
        return push(std::move(n));
    }

    // Frozen parameter: read without a gradient path.
    Var param(const BasicParameter<T>& p) { return view(p.value); }

    Var record(TensorT value, std::initializer_list<Var> parents, BackwardFn fn) {
        return record(std::move(value), std::vector<Var>(parents), std::move(fn));
    }

    Var record(TensorT value, const std::vector<Var>& parents, BackwardFn fn) {
        Node n;
        n.value = std::move(value);
        if (grad_enabled_) {
            for (Var p : parents) {
                if (p.valid() && nodes_[static_cast<size_t>(p.id)].requires_grad) {
                    n.requires_grad = true;
                    break;
                }
            }
        }
        if (n.requires_grad) {
            n.backward = std::move(fn);
        }
        return push(std::move(n));
    }

    const TensorT& value(Var v) const {
        const Node& n = node(v);
        return n.ref != nullptr ? *n.ref : n.value;
    }

    bool requires_grad(Var v) const { return v.valid() && node(v).requires_grad; }

    // Gradient buffer for v, zero-initialised on first access.
    TensorT& grad(Var v) {
        Node& n = node(v);
        if (!n.has_grad) {
            n.grad = TensorT(value(v).shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    bool has_grad(Var v) const { return node(v).has_grad; }
    bool grad_enabled() const { return grad_enabled_; }
    size_t size() const { return nodes_.size(); }

    void backward(Var loss) {
        if (value(loss).numel() != 1) {
            throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                        shape_string(value(loss).shape));
        }
        if (!requires_grad(loss)) {
            return;
        }
        grad(loss).data[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.has_grad || !n.requires_grad) {
                continue;
            }
            if (n.backward) {
                n.backward(*this, Var{i});
            }
            if (n.param != nullptr) {
                auto& pg = n.param->grad;
                if (pg.shape != n.grad.shape) {
                    pg = TensorT(n.grad.shape);
                }
                for (size_t j = 0; j < pg.data.size(); ++j) {
                    pg.data[j] += n.grad.data[j];
                }
            }
        }
    }

private:
    struct Node {
        TensorT value;
        const TensorT* ref = nullptr;
        TensorT grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
        BasicParameter<T>* param = nullptr;
    };

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Node& node(Var v) {
        if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
            throw std::out_of_range("graph: invalid variable");
        }
        return nodes_[static_cast<size_t>(v.id)];
    }
    const Node& node(Var v) const {
        if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
            throw std::out_of_range("graph: invalid variable");
        }
        return nodes_[static_cast<size_t>(v.id)];
    }

    std::vector<Node> nodes_;
    bool grad_enabled_;
};

using Graph = BasicGraph<float>;

}  // namespace siren::nn
