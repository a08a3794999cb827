#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "dlmbir/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dlmbir;

namespace {

std::vector<std::size_t> first_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

/// Gradient of the loss by one plain forward/backward pass over the batch.
template <typename T>
ParamGrads<T> plain_gradient(const NetworkParams<T>& p, const Tensor<T>& in, const Tensor<T>& target, BnMode mode) {
  const auto trace = forward_traced(p, in, mode);
  Tensor<T> up(trace.output.shape());
  for (std::size_t i = 0; i < up.size(); ++i)
    up[i] = (trace.output[i] - target[i]) / static_cast<T>(in.dim(0));
  return backward(p, trace, up, mode);
}

double max_grad_diff(const ParamGrads<double>& a, const ParamGrads<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  return worst;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("loss follows the residual objective") {
    const std::vector<Tensor<double>> a{Tensor<double>({1}, 2.0)}, z{Tensor<double>({1}, 0.0)};
    CHECK(loss<double>(a, a) == 0.0);
    CHECK(loss<double>(a, z) == 2.0);
    const std::vector<Tensor<double>> pred{Tensor<double>({2}, std::vector<double>{1, 0}),
                                           Tensor<double>({2}, std::vector<double>{1, std::sqrt(2.0)})};
    const std::vector<Tensor<double>> zero{Tensor<double>({2}), Tensor<double>({2})};
    CHECK(loss<double>(pred, zero) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(batch_loss(Tensor<double>({2, 2}, std::vector<double>{1, 0, 1, std::sqrt(2.0)}), Tensor<double>({2, 2})) ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(loss<double>({}, {}), std::invalid_argument);
  }

  TEST_CASE("adam on scalar quadratics") {
    TrainingConfig cfg;
    cfg.learning_rate = 0.1;
    SUBCASE("zero gradient leaves parameters") {
      Tensor<double> p({3}, 1.0);
      AdamState<double> s;
      std::vector<Tensor<double>*> params{&p};
      std::vector<Tensor<double>> g{Tensor<double>({3})};
      adam_step<double>(params, g, s, cfg);
      CHECK(p == Tensor<double>({3}, 1.0));
      CHECK(s.step_count == 1);
    }
    SUBCASE("trajectory matches the scalar recurrence") {
      Tensor<double> p({1}, 1.0);
      AdamState<double> s;
      oracle::ScalarAdam ref{0.1, 0.9, 0.999, 1e-8};
      double q = 1.0;
      // |p| is a damped oscillation; its peak per half-cycle must shrink.
      std::vector<double> peaks{1.0};
      double previous = 1.0;
      for (int step = 1; step <= 200; ++step) {
        std::vector<Tensor<double>*> params{&p};
        std::vector<Tensor<double>> g{Tensor<double>({1}, 2 * p[0])};
        adam_step<double>(params, g, s, cfg);
        q = ref.step(q);
        CHECK(p[0] == doctest::Approx(q).epsilon(1e-12));
        if (step == 1) CHECK(std::abs(p[0] - 0.9) < 1e-3);
        if ((p[0] > 0) != (previous > 0)) peaks.push_back(0.0);
        peaks.back() = std::max(peaks.back(), std::abs(p[0]));
        previous = p[0];
        for (double v : s.second_moment[0].data()) CHECK(v >= 0);
      }
      CHECK(std::abs(p[0]) < 1e-2);
      REQUIRE(peaks.size() >= 3);
      for (std::size_t i = 1; i < peaks.size(); ++i) CHECK(peaks[i] < peaks[i - 1]);
    }
    SUBCASE("mirrored gradients give mirrored trajectories") {
      Tensor<double> a({1}, 0.7), b({1}, -0.7);
      AdamState<double> sa, sb;
      for (int i = 0; i < 50; ++i) {
        std::vector<Tensor<double>*> pa{&a}, pb{&b};
        std::vector<Tensor<double>> ga{Tensor<double>({1}, 2 * a[0])}, gb{Tensor<double>({1}, 2 * b[0])};
        adam_step<double>(pa, ga, sa, cfg);
        adam_step<double>(pb, gb, sb, cfg);
        CHECK(a[0] == -b[0]);
      }
    }
    SUBCASE("non-finite gradients name the parameter") {
      Tensor<double> p({2}, 1.0);
      AdamState<double> s;
      std::vector<Tensor<double>*> params{&p};
      std::vector<Tensor<double>> g{Tensor<double>({2}, std::vector<double>{0, NAN})};
      const std::vector<std::string> names{"layer3.conv.weight"};
      try {
        adam_step<double>(params, g, s, cfg, names);
        FAIL("expected NonFiniteGradientError");
      } catch (const NonFiniteGradientError& e) {
        CHECK(e.parameter() == "layer3.conv.weight");
      }
      CHECK(p == Tensor<double>({2}, 1.0));
    }
  }

  TEST_CASE("shard averaging") {
    const auto set = support::small_patches<double>(3, 16, 3, 8);
    const auto variant = NetworkVariant::two_point_five_d(3, 4, 4);
    auto params = build_network<double>(variant, 5);
    const auto rows = first_rows(16);
    const auto in = network_inputs(variant, set, rows);
    const auto target = network_targets(variant, set, rows);

    SUBCASE("K = 1 is plain backprop") {
      const auto r = shard_gradients(params, in, target, 1, ShardBnMode::per_shard);
      CHECK(max_grad_diff(r.grads, plain_gradient(params, in, target, BnMode::train)) == 0.0);
      CHECK(r.loss == doctest::Approx(batch_loss(forward_batch(params, in, BnMode::train), target)).epsilon(1e-12));
    }
    SUBCASE("frozen statistics make K shards equal the full batch") {
      const auto full = shard_gradients(params, in, target, 1, ShardBnMode::frozen);
      for (std::size_t k : {2u, 4u}) {
        const auto r = shard_gradients(params, in, target, k, ShardBnMode::frozen);
        CHECK(max_grad_diff(r.grads, full.grads) < 1e-6);
        CHECK(r.loss == doctest::Approx(full.loss).epsilon(1e-12));
      }
    }
    SUBCASE("identical samples reduce to the single-sample gradient") {
      const std::vector<std::size_t> same(8, 2);
      const auto in8 = network_inputs(variant, set, same), t8 = network_targets(variant, set, same);
      const std::vector<std::size_t> one{2};
      const auto single = shard_gradients(params, network_inputs(variant, set, one), network_targets(variant, set, one),
                                          1, ShardBnMode::frozen);
      for (std::size_t k : {1u, 2u, 4u}) {
        CHECK(max_grad_diff(shard_gradients(params, in8, t8, k, ShardBnMode::frozen).grads, single.grads) < 1e-12);
      }
    }
    SUBCASE("threads do not change the result") {
      const auto a = shard_gradients(params, in, target, 4, ShardBnMode::per_shard, true);
      const auto b = shard_gradients(params, in, target, 4, ShardBnMode::per_shard, false);
      CHECK(max_grad_diff(a.grads, b.grads) == 0.0);
      for (std::size_t l = 0; l < params.layers.size(); ++l)
        if (a.bn_states[l]) CHECK(a.bn_states[l]->running_mean == b.bn_states[l]->running_mean);
    }
    CHECK_THROWS_AS(shard_gradients(params, in, target, 3, ShardBnMode::frozen), std::invalid_argument);
  }

  TEST_CASE("80/20 split and epoch order") {
    const auto s = split_dataset(1000, 0.2, 4);
    CHECK(s.validation.size() == 200);
    CHECK(s.train.size() == 800);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    for (auto v : s.validation) CHECK(all.insert(v).second);
    CHECK(all.size() == 1000);
    CHECK(split_dataset(1000, 0.2, 4).train == s.train);
    const auto o1 = epoch_order(s.train, 4, 0), o2 = epoch_order(s.train, 4, 1);
    CHECK(o1 != o2);
    CHECK(std::is_permutation(o1.begin(), o1.end(), s.train.begin()));
    CHECK(epoch_order(s.train, 4, 0) == o1);
    CHECK_THROWS_AS(split_dataset(10, 1.0, 0), std::invalid_argument);
    TrainingConfig bad;
    bad.batch_size = 30;
    bad.shards = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }

  TEST_CASE("network batch layouts") {
    const auto set3 = support::small_patches<float>(4, 4, 7, 8, true);
    const auto rows = first_rows(4);
    CHECK(network_inputs(NetworkVariant::three_d(3, 2), set3, rows).shape() == Shape{4, 1, 7, 8, 8});
    CHECK(network_targets(NetworkVariant::three_d(3, 2), set3, rows).shape() == Shape{4, 1, 7, 8, 8});
    const auto set1 = support::small_patches<float>(4, 4, 1, 8);
    CHECK(network_inputs(NetworkVariant::two_d(3, 2), set1, rows).shape() == Shape{4, 1, 8, 8});
  }

  TEST_CASE("train: contracts") {
    const auto set = support::small_patches<double>(5, 200, 1, 8);
    TrainingConfig cfg;
    cfg.batch_size = 16;
    cfg.seed = 3;
    SUBCASE("zero epochs returns the initialization") {
      cfg.epochs = 0;
      const auto r = train(set, NetworkVariant::two_d(3, 4), cfg);
      CHECK(r.history.empty());
      const auto init = build_network<double>(NetworkVariant::two_d(3, 4), 3);
      CHECK(*r.params.trainable()[0] == *init.trainable()[0]);
    }
    SUBCASE("window mismatch fails before training") {
      CHECK_THROWS_AS(train(set, NetworkVariant::two_point_five_d(3, 3, 4), cfg), ShapeError);
    }
    SUBCASE("bitwise deterministic per shard count") {
      cfg.epochs = 2;
      for (std::size_t k : {1u, 2u, 4u}) {
        cfg.shards = k;
        const auto a = train(set, NetworkVariant::two_d(3, 4), cfg);
        const auto b = train(set, NetworkVariant::two_d(3, 4), cfg);
        REQUIRE(a.history.size() == 2);
        CHECK(a.history.back().train_loss == b.history.back().train_loss);
        CHECK(a.history.back().val_loss == b.history.back().val_loss);
        CHECK(*a.params.trainable()[0] == *b.params.trainable()[0]);
        CHECK(a.history.back().step == 2 * (160 / 16));
      }
    }
    SUBCASE("history csv") {
      cfg.epochs = 1;
      std::size_t calls = 0;
      cfg.checkpoint_every = 4;
      const auto r = train<double>(set, NetworkVariant::two_d(3, 4), cfg,
                                   [&](const NetworkParams<double>& p) { CHECK(p.step % 4 == 0);
                                     ++calls; });
      CHECK(calls == 2);
      const auto dir = support::temp_dir("history");
      write_history_csv(r.history, dir / "h.csv");
      std::ifstream is(dir / "h.csv");
      std::string header;
      std::getline(is, header);
      CHECK(header == "step,epoch,train_loss,val_loss,val_psnr_db,wall_time_s");
      for (const auto& rec : r.history) {
        CHECK(rec.train_loss >= 0);
        CHECK(rec.val_loss >= 0);
      }
    }
  }

  TEST_CASE("training reduces the loss") {
    const auto set = support::small_patches<float>(6, 5000, 1, 12);
    const auto variant = NetworkVariant::two_d(5, 8);
    TrainingConfig cfg;
    cfg.seed = 2;
    const auto split = split_dataset(set.size(), cfg.val_fraction, cfg.seed);
    // Initial loss: the training objective at step 0 over the training split.
    const auto init = build_network<float>(variant, cfg.seed);
    const double initial =
        batch_loss(forward_batch(init, network_inputs(variant, set, split.train), BnMode::train),
                   network_targets(variant, set, split.train));
    const double zero_prediction =
        batch_loss(Tensor<float>(network_targets(variant, set, split.train).shape()),
                   network_targets(variant, set, split.train));

    // Epoch-end losses over the full training split for the first three epochs.
    std::vector<double> epoch_end;
    for (std::size_t e = 1; e <= 3; ++e) {
      cfg.epochs = e;
      epoch_end.push_back(evaluate_patches(train(set, variant, cfg).params, set, split.train).loss);
    }
    int regressions = 0;
    for (std::size_t i = 1; i < epoch_end.size(); ++i)
      if (epoch_end[i] > epoch_end[i - 1]) {
        ++regressions;
        CHECK(epoch_end[i] <= 1.05 * epoch_end[i - 1]);
      }
    CHECK(regressions <= 1);

    cfg.epochs = 30;
    const auto r = train(set, variant, cfg);
    const double final_loss = evaluate_patches(r.params, set, split.train).loss;
    MESSAGE("initial " << initial << " final " << final_loss);
    CHECK(final_loss < 0.25 * initial);
    CHECK(final_loss < zero_prediction);
    CHECK(r.history.size() == 30);
  }
}
