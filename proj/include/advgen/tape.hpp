#pragma once

#include <functional>
#include <string>
#include <vector>

#include "advgen/tensor.hpp"

namespace advgen {

// Reverse-mode tape. Ops append nodes in execution order, which is a
// topological order by construction; backward() replays it once in reverse.
class Tape {
public:
    struct Node {
        Tensor output;
        std::function<void()> backward;  // reads output grad, accumulates into inputs
        std::string op;
    };

    void record(Tensor output, std::string op, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(output), std::move(backward), std::move(op)});
    }

    size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
    // The tape is cleared afterwards; leaf grads survive in their tensors.
    void backward(Tensor loss) {
        if (loss.numel() != 1) throw UsageError("backward() requires a scalar loss");
        loss.grad()[0] += 1.0f;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->backward) it->backward();
        }
        clear();
    }

    static Tape*& active() {
        thread_local Tape* t = nullptr;
        return t;
    }

private:
    std::vector<Node> nodes_;
};

// Scoped activation: ops record onto the innermost live scope's tape.
class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(Tape::active()) { Tape::active() = &t; }
    ~TapeScope() { Tape::active() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Scoped suppression, for forwards that must not extend the graph
// (inference, cached clean features, finite-difference probes).
class NoTapeScope {
public:
    NoTapeScope() : prev_(Tape::active()) { Tape::active() = nullptr; }
    ~NoTapeScope() { Tape::active() = prev_; }
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* prev_;
};

inline bool recording() { return Tape::active() != nullptr; }

}  // namespace advgen
