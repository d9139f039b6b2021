#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck_cases.hpp"
#include "patchnet/error.hpp"
#include "test_util.hpp"

using namespace patchnet;

TEST_CASE("every primitive passes the gradient check on five seeds") {
    for (const auto& c : gradcases::all_cases()) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto r = grad_check(c.op, c.shapes, seed, c.options);
            INFO(c.name << " seed " << seed << " input " << r.worst_input << " element "
                        << r.worst_element << " analytic " << r.analytic << " numeric " << r.numeric);
            CHECK(r.max_rel_error < 1e-3);
        }
    }
}

TEST_CASE("f32 forwards agree with their double oracles") {
    for (const auto& c : gradcases::all_cases()) {
        Tape tape;
        std::vector<Tape::Id> ids;
        std::vector<ref::Vec> in;
        for (std::size_t k = 0; k < c.shapes.size(); ++k) {
            const Tensor t = testutil::random_tensor(c.shapes[k], 40 + k);
            ids.push_back(tape.leaf(t));
            in.push_back(ref::to_vec(t));
        }
        const Tensor& out = tape.value(c.op.build(tape, ids));
        INFO(c.name);
        CHECK(testutil::max_abs_diff(out, c.op.reference(in)) < 1e-5);
    }
}

TEST_CASE("the harness flags a wrong backward rule") {
    OpUnderTest bad;
    bad.build = [](Tape& t, std::span<const Tape::Id> in) {
        const Tape::Id x = in[0];
        const Tape::Id ids[] = {x};
        Tensor y = t.value(x);
        for (float& v : y.values()) v *= 3.0f;
        return t.record(y, ids, [x](Tape& tp, const Tensor& g) {
            Tensor gx = g;
            for (float& v : gx.values()) v *= 2.0f;  // should be 3
            tp.accumulate(x, gx);
        });
    };
    bad.reference = [](const std::vector<ref::Vec>& in) {
        ref::Vec out = in[0];
        for (double& v : out) v *= 3.0;
        return out;
    };
    const Shape shapes[] = {{6}};
    CHECK(grad_check(bad, shapes, 1).max_rel_error > 0.3);
}

TEST_CASE("gradients accumulate over repeated uses of a node") {
    Tape tape;
    const Tape::Id x = tape.leaf(testutil::random_tensor({1, 2, 2, 2}, 3));
    const Tape::Id both[] = {x, x};
    const Tape::Id y = ag::concat_channels(tape, both);
    tape.backward(ag::weighted_sum(tape, y, Tensor({1, 4, 2, 2}, 1.0f)));
    for (float g : tape.grad(x).values()) CHECK(g == 2.0f);
}

TEST_CASE("leaves without requires_grad receive no gradient") {
    Tape tape;
    const Tape::Id x = tape.leaf(Tensor({2, 3}, 1.0f), false);
    const Tape::Id w = tape.leaf(testutil::random_tensor({4, 3}, 1));
    const Tape::Id b = tape.leaf(Tensor({4}));
    const Tape::Id y = ag::linear(tape, x, w, b);
    tape.backward(ag::weighted_sum(tape, y, Tensor({2, 4}, 1.0f)));
    CHECK(tape.grad(x).empty());
    CHECK_FALSE(tape.grad(w).empty());
    CHECK(tape.grad(y).empty());  // intermediates are released after replay
}

TEST_CASE("backward from a non-scalar root needs an explicit seed") {
    Tape tape;
    const Tape::Id x = tape.leaf(Tensor({3}, 1.0f));
    const Tape::Id y = ag::relu(tape, x);
    CHECK_THROWS_AS(tape.backward(y), Error);
    tape.backward(y, Tensor({3}, 2.0f));
    CHECK(tape.grad(x)[0] == 2.0f);
}
