#pragma once

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slpt/diffcore/params.hpp"
#include "slpt/diffcore/tensor.hpp"

namespace slpt {

// Handle to a value slot on a Graph tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

// Reverse-mode tape. Every op records its forward outputs together with a
// hand-written backward closure; backward() replays the closures in reverse
// recording order, so gradients reaching a slot along several paths are summed.
template <class T>
class Graph {
public:
    // Receives the gradients of the op's outputs (nullptr where an output got
    // no gradient) and accumulates into the inputs' gradients.
    using GradList = std::vector<const Tensor<T>*>;
    using BackwardFn = std::function<void(Graph&, const GradList&)>;

    Var constant(Tensor<T> value) { return push_slot(std::move(value), false); }

    Var leaf(Tensor<T> value, bool requires_grad = true) { return push_slot(std::move(value), requires_grad); }

    // Binds a stored parameter; repeated calls with the same name return the same slot.
    Var param(ParamStore<T>& store, const std::string& name)
    {
        auto key = std::make_pair(static_cast<const void*>(&store), name);
        if (auto it = param_slots_.find(key); it != param_slots_.end()) return it->second;
        auto& entry = store.at(name);
        Var v = push_slot(entry.value, true);
        param_slots_.emplace(key, v);
        bindings_.push_back({v, &entry});
        return v;
    }

    const Tensor<T>& value(Var v) const { return slot(v).value; }
    bool requires_grad(Var v) const { return slot(v).requires_grad; }
    bool has_grad(Var v) const { return !slot(v).grad.empty(); }

    // Gradient buffer for v, allocated as zeros on first use.
    Tensor<T>& grad(Var v)
    {
        auto& s = slot(v);
        if (s.grad.empty()) s.grad = Tensor<T>(s.value.shape());
        return s.grad;
    }

    const Tensor<T>* grad_if(Var v) const
    {
        const auto& s = slot(v);
        return s.grad.empty() ? nullptr : &s.grad;
    }

    std::vector<Var> record(std::string op, const std::vector<Var>& inputs, std::vector<Tensor<T>> outputs,
                            BackwardFn backward)
    {
        bool any_grad = false;
        for (Var in : inputs) any_grad = any_grad || slot(in).requires_grad;
        std::vector<Var> outs;
        outs.reserve(outputs.size());
        for (auto& t : outputs) {
            if (!t.all_finite()) throw NumericalError("non-finite value in forward output of op '" + op + "'");
            outs.push_back(push_slot(std::move(t), any_grad));
        }
        if (any_grad) nodes_.push_back(Node{std::move(op), inputs, outs, std::move(backward)});
        return outs;
    }

    Var record1(std::string op, const std::vector<Var>& inputs, Tensor<T> output, BackwardFn backward)
    {
        std::vector<Tensor<T>> outs;
        outs.push_back(std::move(output));
        return record(std::move(op), inputs, std::move(outs), std::move(backward))[0];
    }

    std::size_t tape_size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1, runs the tape backwards, accumulates parameter
    // gradients into their stores and clears the tape.
    void backward(Var loss)
    {
        require(value(loss).size() == 1, "backward() needs a scalar loss, got shape " + shape_str(value(loss).shape()));
        require(!consumed_, "backward() called twice on the same tape");
        grad(loss).fill(T(1));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            GradList out_grads;
            bool live = false;
            for (Var o : it->outputs) {
                out_grads.push_back(grad_if(o));
                live = live || out_grads.back() != nullptr;
            }
            if (!live) continue;
            it->backward(*this, out_grads);
            for (Var in : it->inputs) {
                const auto* g = grad_if(in);
                if (g && !g->all_finite()) throw NumericalError("non-finite gradient produced by op '" + it->op + "'");
            }
        }
        for (auto& [v, entry] : bindings_) {
            if (const auto* g = grad_if(v)) {
                entry->grad += *g;
                entry->has_grad = true;
            }
        }
        nodes_.clear();
        consumed_ = true;
    }

private:
    struct Slot {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
    };
    struct Node {
        std::string op;
        std::vector<Var> inputs;
        std::vector<Var> outputs;
        BackwardFn backward;
    };

    Var push_slot(Tensor<T> value, bool requires_grad)
    {
        slots_.push_back(Slot{std::move(value), {}, requires_grad});
        return Var{slots_.size() - 1};
    }

    Slot& slot(Var v)
    {
        require(v.id < slots_.size(), "invalid Var handle");
        return slots_[v.id];
    }
    const Slot& slot(Var v) const
    {
        require(v.id < slots_.size(), "invalid Var handle");
        return slots_[v.id];
    }

    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    std::map<std::pair<const void*, std::string>, Var> param_slots_;
    std::vector<std::pair<Var, ParamEntry<T>*>> bindings_;
    bool consumed_ = false;
};

} // namespace slpt
