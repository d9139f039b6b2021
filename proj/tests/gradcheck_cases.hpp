#pragma once

// Every differentiable primitive paired with its double-precision oracle.

#include <string>
#include <vector>

#include "patchnet/autograd.hpp"
#include "patchnet/gradcheck.hpp"
#include "reference_ops.hpp"

namespace gradcases {

using namespace patchnet;

struct Case {
    std::string name;
    OpUnderTest op;
    std::vector<Shape> shapes;
    GradCheckOptions options;
};

inline Case conv_case(std::string name, Shape xs, Shape ws, std::size_t stride, std::size_t pad) {
    Case c;
    c.name = std::move(name);
    c.shapes = {xs, ws, {ws[0]}};
    c.op.build = [=](Tape& t, std::span<const Tape::Id> in) {
        return ag::conv2d(t, in[0], in[1], in[2], {stride, pad});
    };
    c.op.reference = [=](const std::vector<ref::Vec>& in) {
        return ref::conv2d(in[0], xs, in[1], ws, in[2], stride, pad);
    };
    return c;
}

inline std::vector<Case> all_cases() {
    std::vector<Case> cases;
    cases.push_back(conv_case("conv2d 3x3 pad 1", {2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1));
    cases.push_back(conv_case("conv2d 2x2 stride 2", {2, 2, 6, 6}, {3, 2, 2, 2}, 2, 0));
    cases.push_back(conv_case("conv2d 1x1", {2, 4, 3, 3}, {2, 4, 1, 1}, 1, 0));

    {
        const Shape xs{2, 3, 5, 5};
        Case c{"batchnorm2d train", {}, {xs, {3}, {3}}, {}};
        c.op.build = [](Tape& t, std::span<const Tape::Id> in) {
            Tensor rm({3}, 0.0f), rv({3}, 1.0f);
            return ag::batchnorm2d(t, in[0], in[1], in[2], rm, rv, ops::Mode::Train);
        };
        c.op.reference = [xs](const std::vector<ref::Vec>& in) {
            return ref::batchnorm_train(in[0], xs, in[1], in[2]);
        };
        cases.push_back(std::move(c));
    }
    {
        const Shape xs{2, 3, 2, 2};
        const ref::Vec rm{0.2, -0.1, 0.05}, rv{0.8, 1.3, 0.6};
        Case c{"batchnorm2d eval", {}, {xs, {3}, {3}}, {}};
        c.op.build = [=](Tape& t, std::span<const Tape::Id> in) {
            Tensor m({3}), v({3});
            for (std::size_t i = 0; i < 3; ++i) {
                m[i] = static_cast<float>(rm[i]);
                v[i] = static_cast<float>(rv[i]);
            }
            return ag::batchnorm2d(t, in[0], in[1], in[2], m, v, ops::Mode::Eval);
        };
        c.op.reference = [=](const std::vector<ref::Vec>& in) {
            ref::Vec m(3), v(3);
            for (std::size_t i = 0; i < 3; ++i) {
                m[i] = static_cast<float>(rm[i]);
                v[i] = static_cast<float>(rv[i]);
            }
            return ref::batchnorm_eval(in[0], xs, in[1], in[2], m, v);
        };
        cases.push_back(std::move(c));
    }
    {
        Case c{"relu", {}, {{3, 7}}, {}};
        c.options.kink_margin = 0.05f;
        c.op.build = [](Tape& t, std::span<const Tape::Id> in) { return ag::relu(t, in[0]); };
        c.op.reference = [](const std::vector<ref::Vec>& in) { return ref::relu(in[0]); };
        cases.push_back(std::move(c));
    }
    {
        Case c{"linear", {}, {{4, 6}, {5, 6}, {5}}, {}};
        c.op.build = [](Tape& t, std::span<const Tape::Id> in) {
            return ag::linear(t, in[0], in[1], in[2]);
        };
        c.op.reference = [](const std::vector<ref::Vec>& in) {
            return ref::linear(in[0], 4, 6, in[1], 5, in[2]);
        };
        cases.push_back(std::move(c));
    }
    {
        const Shape xs{2, 3, 4, 4};
        Case c{"global_avg_pool", {}, {xs}, {}};
        c.op.build = [](Tape& t, std::span<const Tape::Id> in) { return ag::global_avg_pool(t, in[0]); };
        c.op.reference = [xs](const std::vector<ref::Vec>& in) { return ref::global_avg_pool(in[0], xs); };
        cases.push_back(std::move(c));
    }
    {
        const std::vector<int> labels{0, 3, 1, 2, 3};
        Case c{"cross_entropy", {}, {{5, 4}}, {}};
        c.options.low = -3.0f;
        c.options.high = 3.0f;
        c.op.build = [labels](Tape& t, std::span<const Tape::Id> in) {
            return ag::cross_entropy(t, in[0], labels);
        };
        c.op.reference = [labels](const std::vector<ref::Vec>& in) {
            return ref::Vec{ref::cross_entropy(in[0], 5, 4, labels)};
        };
        cases.push_back(std::move(c));
    }
    {
        const Rng rng(77);
        Case c{"dropout train", {}, {{4, 10}}, {}};
        c.op.build = [rng](Tape& t, std::span<const Tape::Id> in) {
            return ag::dropout(t, in[0], 0.5f, ops::Mode::Train, rng, 9);
        };
        c.op.reference = [rng](const std::vector<ref::Vec>& in) {
            Tensor scale;
            ops::dropout(Tensor({4, 10}), 0.5f, ops::Mode::Train, rng, 9, &scale);
            ref::Vec out(in[0].size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[0][i] * scale[i];
            return out;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c{"concat_channels", {}, {{2, 2, 3, 3}, {2, 1, 3, 3}}, {}};
        c.op.build = [](Tape& t, std::span<const Tape::Id> in) { return ag::concat_channels(t, in); };
        c.op.reference = [](const std::vector<ref::Vec>& in) {
            ref::Vec out;
            for (std::size_t n = 0; n < 2; ++n) {
                out.insert(out.end(), in[0].begin() + n * 18, in[0].begin() + (n + 1) * 18);
                out.insert(out.end(), in[1].begin() + n * 9, in[1].begin() + (n + 1) * 9);
            }
            return out;
        };
        cases.push_back(std::move(c));
    }
    return cases;
}

}  // namespace gradcases
