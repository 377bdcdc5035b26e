// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bcu/attacks.hpp"
#include "bcu/error.hpp"
#include "support.hpp"

using namespace bcu;

namespace {

/// `n` samples of shape 1 x side x side whose labels cycle through 0..9.
Dataset cyclic_dataset(Index n, Index side, float fill) {
  Dataset d;
  d.images = TensorF::constant({n, 1, side, side}, fill);
  d.labels = std::vector<int>(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) (*d.labels)[static_cast<std::size_t>(i)] = static_cast<int>(i % 10);
  d.name = "cyclic";
  return d;
}

}  // namespace

TEST_CASE("checkerboard: 3x3 alternating block in the lower-right corner") {
  const TensorF img = TensorF::constant({1, 28, 28}, 0.5f);
  const TensorF out = apply_trigger(img, Checkerboard{3, 0});
  for (Index i = 0; i < 28; ++i) {
    for (Index j = 0; j < 28; ++j) {
      float expected = 0.5f;
      if (i >= 25 && j >= 25) expected = ((i - 25) + (j - 25)) % 2 == 0 ? 1.0f : 0.0f;
      CHECK(out[i * 28 + j] == expected);
    }
  }
  CHECK(out[25 * 28 + 25] == 1.0f);
  CHECK(out[27 * 28 + 27] == 1.0f);
  CHECK(out[26 * 28 + 27] == 0.0f);
}

TEST_CASE("checkerboard: margin shifts the block and oversize is rejected") {
  const TensorF out = apply_trigger(TensorF({2, 6, 6}), Checkerboard{2, 1});
  CHECK(out[3 * 6 + 3] == 1.0f);
  CHECK(out[4 * 6 + 4] == 1.0f);
  CHECK(out[5 * 6 + 5] == 0.0f);
  CHECK(out[36 + 3 * 6 + 3] == 1.0f);  // every channel
  CHECK_THROWS_AS(apply_trigger(TensorF({1, 6, 6}), Checkerboard{6, 1}), ConfigError);
}

TEST_CASE("blended: alpha 0 is identity, alpha 1 is the seeded pattern") {
  Rng rng(2);
  const TensorF img = test::random_tensor<float>({1, 4, 5}, rng, 0.0, 1.0);
  CHECK(apply_trigger(img, Blended{7, 0.0}) == img);
  const TensorF pattern = apply_trigger(img, Blended{7, 1.0});
  Rng stream(7, "blend-pattern");
  for (Index i = 0; i < 20; ++i) CHECK(pattern[i] == static_cast<float>(stream.uniform()));
  CHECK(apply_trigger(TensorF({1, 4, 5}), Blended{8, 1.0}) != pattern);

  const TensorF mixed = apply_trigger(img, Blended{7, 0.2});
  for (Index i = 0; i < 20; ++i) CHECK(mixed[i] == doctest::Approx(0.8 * img[i] + 0.2 * pattern[i]).epsilon(1e-6));
  CHECK_THROWS_AS(apply_trigger(img, Blended{7, 1.5}), ConfigError);
}

TEST_CASE("sinusoid: column shift matches the closed form and clamps") {
  const TensorF out = apply_trigger(TensorF::constant({1, 3, 28}, 0.5f), Sinusoid{20.0, 6.0});
  for (Index j = 0; j < 28; ++j) {
    const double shift = 20.0 / 255.0 * std::sin(2.0 * std::numbers::pi * 6.0 * static_cast<double>(j) / 28.0);
    for (Index i = 0; i < 3; ++i) CHECK(out[i * 28 + j] == doctest::Approx(0.5 + shift).epsilon(1e-6));
  }
  CHECK(out[0] == 0.5f);
  const TensorF bright = apply_trigger(TensorF::constant({1, 1, 28}, 1.0f), Sinusoid{20.0, 6.0});
  CHECK(bright.values().maxCoeff() == 1.0f);
  const TensorF dark = apply_trigger(TensorF({1, 1, 28}), Sinusoid{20.0, 6.0});
  CHECK(dark.values().minCoeff() == 0.0f);
  CHECK(apply_trigger(TensorF::constant({1, 2, 8}, 0.3f), Sinusoid{0.0, 6.0}) == TensorF::constant({1, 2, 8}, 0.3f));
}

TEST_CASE("poison: all-to-one at 10% of 50000 poisons 5000 samples") {
  const Dataset train = cyclic_dataset(50000, 3, 0.5f);
  PoisonPlan plan;
  plan.seed = 4;
  const PoisonResult r = poison_training_set(train, plan);
  CHECK(r.indices.size() == 5000);
  CHECK(std::is_sorted(r.indices.begin(), r.indices.end()));
  std::size_t relabeled = 0, triggered = 0;
  std::vector<bool> chosen(50000, false);
  for (Index i : r.indices) chosen[static_cast<std::size_t>(i)] = true;
  for (Index i = 0; i < 50000; ++i) {
    const bool hit = r.poisoned.images[i * 9] == 1.0f;  // top-left cell of the 3x3 block is white
    triggered += hit;
    CHECK(hit == chosen[static_cast<std::size_t>(i)]);
    const int y = (*r.poisoned.labels)[static_cast<std::size_t>(i)];
    if (hit) CHECK(y == 0);
    else CHECK(y == static_cast<int>(i % 10));
    relabeled += hit && i % 10 != 0;
  }
  CHECK(triggered == 5000);
  CHECK(relabeled > 4000);
}

TEST_CASE("poison: clean-label at 80% of a 6000-sample target class poisons 4800, labels untouched") {
  const Dataset train = cyclic_dataset(60000, 3, 0.5f);
  PoisonPlan plan;
  plan.strategy = PoisonStrategy::clean_label;
  plan.rate = 0.8;
  plan.target_label = 3;
  plan.seed = 1;
  const PoisonResult r = poison_training_set(train, plan);
  CHECK(r.indices.size() == 4800);
  for (Index i : r.indices) CHECK(i % 10 == 3);
  CHECK(*r.poisoned.labels == *train.labels);
}

TEST_CASE("poison: rate 0 and determinism") {
  const Dataset train = cyclic_dataset(200, 3, 0.2f);
  PoisonPlan plan;
  plan.rate = 0.0;
  const PoisonResult none = poison_training_set(train, plan);
  CHECK(none.indices.empty());
  CHECK(none.poisoned.images == train.images);
  plan.rate = 0.25;
  plan.seed = 9;
  CHECK(poison_training_set(train, plan).indices == poison_training_set(train, plan).indices);
  PoisonPlan other = plan;
  other.seed = 10;
  CHECK(poison_training_set(train, other).indices != poison_training_set(train, plan).indices);
  plan.rate = 1.5;
  CHECK_THROWS_AS(poison_training_set(train, plan), ConfigError);
  plan.rate = 0.1;
  plan.target_label = 10;
  CHECK_THROWS_AS(poison_training_set(train, plan), ConfigError);
}

TEST_CASE("asr set: excludes the target class and relabels to the target") {
  const Dataset test = cyclic_dataset(10000, 3, 0.5f);
  PoisonPlan plan;
  const Dataset asr = build_asr_set(test, plan);
  CHECK(asr.size() == 9000);
  for (int y : *asr.labels) CHECK(y == 0);
  for (Index n = 0; n < asr.size(); ++n) CHECK(asr.images[n * 9] == 1.0f);

  Dataset only_target = cyclic_dataset(5, 3, 0.5f);
  for (auto& y : *only_target.labels) y = 0;
  CHECK(build_asr_set(only_target, plan).size() == 0);
}

TEST_CASE("asr set: alpha 0 blend leaves images as the original non-target samples") {
  Dataset test = test::random_dataset(40, {1, 4, 4}, 10, 3);
  PoisonPlan plan;
  plan.trigger = Blended{1, 0.0};
  plan.target_label = 2;
  const Dataset asr = build_asr_set(test, plan);
  Index k = 0;
  for (Index n = 0; n < test.size(); ++n) {
    if ((*test.labels)[static_cast<std::size_t>(n)] == 2) continue;
    for (Index p = 0; p < 16; ++p) CHECK(asr.images[k * 16 + p] == test.images[n * 16 + p]);
    ++k;
  }
  CHECK(k == asr.size());
}

TEST_CASE("poison plan json round trip") {
  PoisonPlan plan;
  plan.trigger = Sinusoid{12.0, 4.0};
  plan.strategy = PoisonStrategy::clean_label;
  plan.rate = 0.5;
  plan.target_label = 7;
  plan.seed = 3;
  const PoisonPlan back = poison_plan_from_json(to_json(plan));
  CHECK(back.hash() == plan.hash());
  CHECK(trigger_name(back.trigger) == "sinusoid");
  CHECK_THROWS_AS(trigger_from_json({{"kind", "patch"}}), ConfigError);
}
