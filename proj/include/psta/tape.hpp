#pragma once

#include <functional>
#include <vector>

#include "psta/tensor.hpp"

namespace psta {

/// Define-by-run tape. Ops append their backward closure as they execute,
/// so the node list is topologically ordered by construction; the backward
/// sweep walks it once in reverse.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return nodes_.size(); }

    void reset() { nodes_.clear(); }

    void run_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. The tape is
/// consumed: a second call is a no-op until new ops are recorded.
template <typename T>
void backward(Tensor<T> loss, Tape<T>& tape) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.grad()[0] = T(1);
    tape.run_backward();
}

}  // namespace psta
