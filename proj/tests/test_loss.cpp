#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "srw/loss.hpp"

using namespace srw;
using namespace srw::testing;

namespace {

// scalar-loop reference, independent of the library path
double loop_pixel_ce(const Tensor& prob, const Tensor& mask, int64_t b, int64_t r, int64_t c) {
    const int64_t ch = mask.at({b, r, c}) == 1.0 ? 1 : 0;
    const double p = std::max(prob.at({b, ch, r, c}), 1e-12);
    return -std::log(p);
}

Tensor random_prob(Rng& rng, int64_t b, int64_t h, int64_t w) {
    Tensor prob = Tensor::zeros({b, 2, h, w});
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t r = 0; r < h; ++r) {
            for (int64_t c = 0; c < w; ++c) {
                const double p1 = rng.uniform(0.01, 0.99);
                prob.at({i, 0, r, c}) = 1.0 - p1;
                prob.at({i, 1, r, c}) = p1;
            }
        }
    }
    return prob;
}

Tensor random_mask3(Rng& rng, int64_t b, int64_t h, int64_t w) {
    Tensor m = Tensor::zeros({b, h, w});
    for (auto& v : m.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return m;
}

}  // namespace

TEST_CASE("pixel_ce goldens") {
    Tensor prob = Tensor::zeros({1, 2, 1, 2});
    prob.at({0, 0, 0, 0}) = 0.0;
    prob.at({0, 1, 0, 0}) = 1.0;  // true class prob 1 -> loss 0
    prob.at({0, 0, 0, 1}) = 0.5;
    prob.at({0, 1, 0, 1}) = 0.5;  // -> ln 2
    Tensor mask = Tensor::zeros({1, 1, 2});
    mask.at({0, 0, 0}) = 1.0;
    mask.at({0, 0, 1}) = 1.0;
    const Tensor lm = pixel_ce(prob, mask);
    CHECK(lm.at({0, 0, 0}) == 0.0);
    CHECK(lm.at({0, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("pixel_ce matches the loop reference exactly on random maps") {
    Rng rng(41);
    const Tensor prob = random_prob(rng, 2, 4, 5);
    const Tensor mask = random_mask3(rng, 2, 4, 5);
    const Tensor lm = pixel_ce(prob, mask);
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t r = 0; r < 4; ++r) {
            for (int64_t c = 0; c < 5; ++c) {
                CHECK(lm.at({b, r, c}) == loop_pixel_ce(prob, mask, b, r, c));
            }
        }
    }
    for (double v : lm.data) CHECK(v >= 0.0);
}

TEST_CASE("clean_loss: all true-class probabilities 0.5 give ln 2") {
    Tensor prob = Tensor::full({3, 2, 4, 4}, 0.5);
    Rng rng(43);
    const Tensor mask = random_mask3(rng, 3, 4, 4);
    CHECK(clean_loss(prob, mask) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("clean_loss degenerates to pixel_ce on a single pixel") {
    Tensor prob = Tensor::zeros({1, 2, 1, 1});
    prob.at({0, 0, 0, 0}) = 0.3;
    prob.at({0, 1, 0, 0}) = 0.7;
    Tensor mask = Tensor::zeros({1, 1, 1});
    mask.at({0, 0, 0}) = 1.0;
    CHECK(clean_loss(prob, mask) == pixel_ce(prob, mask).data[0]);
}

TEST_CASE("clean_loss equals the loop oracle for unequal images") {
    Rng rng(47);
    const Tensor prob = random_prob(rng, 2, 3, 3);
    const Tensor mask = random_mask3(rng, 2, 3, 3);
    double acc = 0.0;
    for (int64_t b = 0; b < 2; ++b) {
        double img = 0.0;
        for (int64_t r = 0; r < 3; ++r) {
            for (int64_t c = 0; c < 3; ++c) img += loop_pixel_ce(prob, mask, b, r, c);
        }
        acc += img / 9.0;
    }
    CHECK(clean_loss(prob, mask) == doctest::Approx(acc / 2.0).epsilon(1e-14));
}

TEST_CASE("weighted_loss goldens and the loop oracle") {
    Rng rng(53);
    const Tensor prob = random_prob(rng, 2, 3, 3);
    const Tensor mask = random_mask3(rng, 2, 3, 3);
    const Tensor lm = pixel_ce(prob, mask);

    CHECK(weighted_loss(lm, Tensor::zeros(lm.shape)) == 0.0);

    Tensor onehot = Tensor::zeros(lm.shape);
    onehot.at({1, 2, 1}) = 1.0;
    CHECK(weighted_loss(lm, onehot) == lm.at({1, 2, 1}));

    const double u = 1.0 / static_cast<double>(lm.numel());
    const Tensor uniform = Tensor::full(lm.shape, u);
    double mean = 0.0;
    for (double v : lm.data) mean += v;
    mean /= static_cast<double>(lm.numel());
    CHECK(weighted_loss(lm, uniform) == doctest::Approx(mean).epsilon(1e-14));

    Tensor negative = Tensor::zeros(lm.shape);
    negative.data[0] = -0.1;
    CHECK_THROWS_AS(weighted_loss(lm, negative), ContractViolation);
}

TEST_CASE("weighted_loss is linear in the weights") {
    Rng rng(59);
    const Tensor prob = random_prob(rng, 1, 4, 4);
    const Tensor mask = random_mask3(rng, 1, 4, 4);
    const Tensor lm = pixel_ce(prob, mask);
    Tensor w1 = Tensor::zeros(lm.shape), w2 = Tensor::zeros(lm.shape);
    for (auto& v : w1.data) v = rng.uniform(0.0, 1.0);
    for (auto& v : w2.data) v = rng.uniform(0.0, 1.0);
    const double a = 0.25, b = 1.5;
    Tensor combo = Tensor::zeros(lm.shape);
    for (size_t k = 0; k < combo.data.size(); ++k) combo.data[k] = a * w1.data[k] + b * w2.data[k];
    CHECK(weighted_loss(lm, combo) ==
          doctest::Approx(a * weighted_loss(lm, w1) + b * weighted_loss(lm, w2)).epsilon(1e-12));
}

TEST_CASE("dice goldens and properties") {
    Tensor a = Tensor::zeros({4, 4}), b = Tensor::zeros({4, 4});
    CHECK(dice(a, b) == 1.0);  // both empty

    a.at({0, 0}) = 1.0;
    a.at({0, 1}) = 1.0;
    CHECK(dice(a, a) == 1.0);

    b.at({3, 3}) = 1.0;
    CHECK(dice(a, b) == 0.0);  // disjoint

    // |A|=4, |B|=2, overlap 2 -> 0.6667
    Tensor a4 = Tensor::zeros({4, 4}), b2 = Tensor::zeros({4, 4});
    a4.at({0, 0}) = a4.at({0, 1}) = a4.at({1, 0}) = a4.at({1, 1}) = 1.0;
    b2.at({0, 0}) = b2.at({0, 1}) = 1.0;
    CHECK(dice(a4, b2) == doctest::Approx(2.0 * 2.0 / 6.0).epsilon(1e-15));
    CHECK(dice(a4, b2) == dice(b2, a4));
}

TEST_CASE("threshold: class 0 wins exact ties") {
    Tensor prob = Tensor::full({1, 2, 2, 2}, 0.5);
    prob.at({0, 1, 0, 0}) = 0.500001;
    prob.at({0, 0, 0, 0}) = 0.499999;
    const Tensor pred = threshold_prob(prob);
    CHECK(pred.at({0, 0, 0}) == 1.0);
    CHECK(pred.at({0, 0, 1}) == 0.0);
    CHECK(pred.at({0, 1, 1}) == 0.0);
}

TEST_CASE("tape builders agree with the eager losses") {
    Rng rng(61);
    const Tensor prob_logits = random_tensor(rng, {2, 2, 4, 4});
    const Tensor mask = random_mask3(rng, 2, 4, 4);
    Tensor w = Tensor::zeros({2, 4, 4});
    for (auto& v : w.data) v = rng.uniform(0.0, 0.1);

    Tape t;
    const int prob = t.softmax2(t.leaf(prob_logits));
    const int cl = build_clean_loss(t, prob, mask);
    const int lm = t.pixel_ce(prob, mask);
    const int wl = build_weighted_loss(t, lm, t.leaf(w));

    const Tensor probs = t.value(prob);
    CHECK(t.value(cl).data[0] == doctest::Approx(clean_loss(probs, mask)).epsilon(1e-14));
    CHECK(t.value(wl).data[0] ==
          doctest::Approx(weighted_loss(pixel_ce(probs, mask), w)).epsilon(1e-14));
}
