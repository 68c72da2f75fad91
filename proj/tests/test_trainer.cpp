#include <cmath>
#include <numeric>

#include "catch2/catch_amalgamated.hpp"
#include "rmi/trainer.hpp"

using namespace rmi;

namespace {

double mean_over(const std::vector<HistoryRow>& rows, std::size_t begin,
                 std::size_t end, double HistoryRow::* field) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += rows[i].*field;
  return s / static_cast<double>(end - begin);
}

}  // namespace

TEST_CASE("lr schedule: warmup ramp, poly decay, continuity") {
  TrainConfig cfg;
  cfg.lr = 0.007;
  cfg.slow_iters = 150;
  cfg.max_iter = 1500;
  cfg.power = 0.9;

  CHECK(lr_at(0, cfg) == 0.0);
  CHECK_THAT(lr_at(75, cfg), Catch::Matchers::WithinRel(0.0035, 1e-12));
  CHECK_THAT(lr_at(150, cfg), Catch::Matchers::WithinRel(0.007, 1e-12));
  // halfway through decay: lr * 0.5^0.9
  CHECK_THAT(lr_at(825, cfg),
             Catch::Matchers::WithinRel(0.007 * std::pow(0.5, 0.9), 1e-12));
  CHECK(lr_at(cfg.max_iter, cfg) == 0.0);

  // strictly increasing through warmup, strictly decreasing after
  for (int s = 1; s <= 150; ++s) CHECK(lr_at(s, cfg) > lr_at(s - 1, cfg));
  for (int s = 151; s <= 1500; ++s) CHECK(lr_at(s, cfg) < lr_at(s - 1, cfg));
}

TEST_CASE("config validation rejects inconsistent settings") {
  TrainConfig cfg;
  cfg.slow_iters = cfg.max_iter;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.lambda = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("generate_shapes is deterministic and covers all classes") {
  ShapesDataset a = generate_shapes(24, 48, 48, 9);
  ShapesDataset b = generate_shapes(24, 48, 48, 9);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i] == b.images[i]);
  }
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    CHECK(a.labels[i] == b.labels[i]);
  }

  std::vector<bool> seen(kShapeClasses, false);
  for (double v : a.labels.values()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v < kShapeClasses);
    REQUIRE(v == std::floor(v));
    seen[static_cast<int>(v)] = true;
  }
  for (int c = 0; c < kShapeClasses; ++c) CHECK(seen[c]);

  CHECK(a.train.size() == 19);
  CHECK(a.test.size() == 5);
}

TEST_CASE("noise-free shapes have exact interior intensities") {
  ShapesDataset ds = generate_shapes(8, 48, 48, 3, 0.0);
  const std::size_t hw = 48 * 48;
  for (std::size_t i = 0; i < ds.count(); ++i) {
    for (std::size_t px = 0; px < hw; ++px) {
      if (ds.labels[i * hw + px] == 0.0) {
        CHECK(ds.images[i * hw + px] == 0.15);
      } else {
        CHECK(ds.images[i * hw + px] > 0.3);
      }
    }
  }
}

TEST_CASE("training with lr = 0 leaves the model untouched") {
  ShapesDataset ds = generate_shapes(8, 48, 48, 4);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.max_iter = 5;
  cfg.slow_iters = 2;
  cfg.seed = 21;
  TrainResult res = train(ds, cfg);
  ConvNet fresh(kShapeClasses, cfg.seed);
  for (std::size_t li = 0; li < fresh.layers().size(); ++li) {
    for (std::size_t i = 0; i < fresh.layers()[li].w.size(); ++i) {
      CHECK(res.model.layers()[li].w[i] == fresh.layers()[li].w[i]);
    }
  }
}

TEST_CASE("training is bitwise deterministic per seed") {
  ShapesDataset ds = generate_shapes(8, 48, 48, 5);
  TrainConfig cfg;
  cfg.max_iter = 10;
  cfg.slow_iters = 3;
  cfg.seed = 33;
  TrainResult a = train(ds, cfg);
  TrainResult b = train(ds, cfg);
  REQUIRE(a.history.size() == 10);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].bce == b.history[i].bce);
    CHECK(a.history[i].rmi == b.history[i].rmi);
  }
  for (std::size_t li = 0; li < a.model.layers().size(); ++li) {
    for (std::size_t i = 0; i < a.model.layers()[li].w.size(); ++i) {
      CHECK(a.model.layers()[li].w[i] == b.model.layers()[li].w[i]);
    }
  }
}

TEST_CASE("pure BCE training halves the loss within 500 steps") {
  ShapesDataset ds = generate_shapes(24, 48, 48, 6);
  TrainConfig cfg;
  cfg.lambda = 1.0;
  cfg.lr = 0.05;
  cfg.max_iter = 500;
  cfg.slow_iters = 50;
  cfg.seed = 7;
  TrainResult res = train(ds, cfg);
  const double head = mean_over(res.history, 0, 20, &HistoryRow::bce);
  const double tail = mean_over(res.history, 450, 500, &HistoryRow::bce);
  INFO("head=" << head << " tail=" << tail);
  CHECK(tail <= 0.5 * head);
}

TEST_CASE("mixed objective decreases both terms on moving average") {
  ShapesDataset ds = generate_shapes(24, 48, 48, 6);
  TrainConfig cfg;
  cfg.lambda = 0.5;
  cfg.lr = 0.05;
  cfg.max_iter = 400;
  cfg.slow_iters = 40;
  cfg.seed = 7;
  TrainResult res = train(ds, cfg);
  const double head_total = mean_over(res.history, 0, 40, &HistoryRow::total);
  const double tail_total =
      mean_over(res.history, 360, 400, &HistoryRow::total);
  const double head_rmi = mean_over(res.history, 0, 40, &HistoryRow::rmi);
  const double tail_rmi = mean_over(res.history, 360, 400, &HistoryRow::rmi);
  INFO("total " << head_total << " -> " << tail_total << ", rmi " << head_rmi
                << " -> " << tail_rmi);
  CHECK(tail_total < head_total);
  CHECK(tail_rmi < head_rmi);
}

TEST_CASE("evaluate_maps: exact agreement scores perfectly") {
  std::vector<int> gt(16 * 16, 0);
  for (std::size_t y = 4; y < 12; ++y) {
    for (std::size_t x = 4; x < 12; ++x) gt[y * 16 + x] = 1;
  }
  EvalReport rep = evaluate_maps({gt}, {gt}, 16, 16, 2);
  CHECK(rep.miou == 1.0);
  CHECK(rep.pixel_acc == 1.0);
  CHECK(rep.boundary_f == 1.0);
}

TEST_CASE("evaluate_maps: hand-computed IoU") {
  // gt is half class 0, half class 1; prediction says class 0 everywhere.
  std::vector<int> gt(4 * 4, 0);
  for (std::size_t i = 8; i < 16; ++i) gt[i] = 1;
  std::vector<int> pred(4 * 4, 0);
  EvalReport rep = evaluate_maps({pred}, {gt}, 4, 4, 2);
  CHECK(rep.per_class_iou[0] == 0.5);
  CHECK(rep.per_class_iou[1] == 0.0);
  CHECK(rep.miou == 0.25);
  CHECK(rep.pixel_acc == 0.5);
}

TEST_CASE("evaluate_maps is invariant to image order") {
  std::vector<int> a(8 * 8, 0), b(8 * 8, 1), pa(8 * 8, 0), pb(8 * 8, 0);
  for (std::size_t i = 0; i < 32; ++i) pb[i] = 1;
  EvalReport r1 = evaluate_maps({pa, pb}, {a, b}, 8, 8, 2);
  EvalReport r2 = evaluate_maps({pb, pa}, {b, a}, 8, 8, 2);
  CHECK(r1.miou == r2.miou);
  CHECK(r1.pixel_acc == r2.pixel_acc);
  CHECK(r1.boundary_f == r2.boundary_f);
}

TEST_CASE("evaluate reports values in range on an untrained model") {
  ShapesDataset ds = generate_shapes(8, 48, 48, 8);
  ConvNet model(kShapeClasses, 19);
  EvalReport rep = evaluate(model, ds, ds.test);
  CHECK(rep.miou >= 0.0);
  CHECK(rep.miou <= 1.0);
  CHECK(rep.pixel_acc >= 0.0);
  CHECK(rep.pixel_acc <= 1.0);
  CHECK(rep.boundary_f >= 0.0);
  CHECK(rep.boundary_f <= 1.0);
}

TEST_CASE("checkpoints round-trip bitwise") {
  ConvNet model(kShapeClasses, 55);
  nlohmann::json echo = {{"seed", 55}, {"lr", 0.05}};
  const std::string path = "/tmp/rmi_test_ckpt.bin";
  save_checkpoint(path, model, echo);
  nlohmann::json back_echo;
  ConvNet back = load_checkpoint(path, &back_echo);
  CHECK(back_echo == echo);
  REQUIRE(back.layers().size() == model.layers().size());
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    CHECK(back.layers()[li].in_ch == model.layers()[li].in_ch);
    CHECK(back.layers()[li].out_ch == model.layers()[li].out_ch);
    for (std::size_t i = 0; i < model.layers()[li].w.size(); ++i) {
      CHECK(back.layers()[li].w[i] == model.layers()[li].w[i]);
    }
    for (std::size_t i = 0; i < model.layers()[li].b.size(); ++i) {
      CHECK(back.layers()[li].b[i] == model.layers()[li].b[i]);
    }
  }
  CHECK_THROWS_AS(load_checkpoint("/tmp/rmi_no_such_ckpt.bin"), IoError);
}
