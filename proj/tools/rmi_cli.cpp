// Command-line front end: loss evaluation on files, gradient checking,
// Gaussian oracle validation, toy training and evaluation.
//
// Exit codes: 0 ok, 1 property failure, 2 usage or I/O error,
// 3 shape mismatch, 4 numerical failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rmi/autodiff.hpp"
#include "rmi/io.hpp"
#include "rmi/lower_bound.hpp"
#include "rmi/oracle.hpp"
#include "rmi/region.hpp"
#include "rmi/trainer.hpp"

using nlohmann::json;

namespace {

rmi::PoolMode parse_pool(const std::string& s) {
  if (s == "avg") return rmi::PoolMode::kAverage;
  if (s == "max") return rmi::PoolMode::kMax;
  if (s == "interp") return rmi::PoolMode::kInterpolate;
  throw CLI::ValidationError("--pool", "expected avg, max or interp");
}

bool looks_like_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw rmi::IoError("cannot open: " + path);
  char m[2] = {0, 0};
  is.read(m, 2);
  return m[0] == 'P' && m[1] == '5';
}

rmi::DenseTensor load_labels(const std::string& path) {
  rmi::DenseTensor t =
      looks_like_pgm(path) ? rmi::read_pgm_stack(path) : rmi::read_rmt1(path);
  if (t.rank() == 2) {
    return rmi::DenseTensor::from_data({1, t.dim(0), t.dim(1)}, t.values());
  }
  if (t.rank() != 3) {
    throw rmi::ShapeMismatch("labels: expected HxW or BxHxW, got rank " +
                             std::to_string(t.rank()));
  }
  return t;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const rmi::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rmi::ShapeMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const rmi::ClassOutOfRange& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const rmi::RegionTooLarge& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const rmi::FactorTooLarge& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const rmi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region mutual information loss toolkit"};
  app.require_subcommand(1);

  // Shared numeric flags.
  int df = 4;
  int region_side = 3;
  double xi = 1e-6;
  double lambda = 0.5;
  std::string pool = "avg";
  std::uint64_t seed = 1;

  auto add_loss_flags = [&](CLI::App* cmd) {
    cmd->add_option("--df", df, "downsampling factor");
    cmd->add_option("--region-side", region_side, "region side length R");
    cmd->add_option("--xi", xi, "diagonal regularizer");
    cmd->add_option("--lambda", lambda, "BCE weight in the objective");
    cmd->add_option("--pool", pool, "downsampling mode: avg, max, interp");
  };
  auto loss_params = [&]() {
    rmi::LossParams p;
    p.pool = rmi::DownsampleConfig{df, parse_pool(pool)};
    p.region_side = region_side;
    p.xi = xi;
    p.lambda = lambda;
    return p;
  };
  auto config_echo = [&]() {
    return json{{"df", df},
                {"region_side", region_side},
                {"xi", xi},
                {"lambda", lambda},
                {"pool", pool},
                {"seed", seed}};
  };

  // loss -------------------------------------------------------------
  auto* c_loss = app.add_subcommand(
      "loss", "evaluate the objective on a labels/probs file pair");
  std::string labels_path, probs_path;
  int ignore_index = -1;
  c_loss->add_option("--labels", labels_path, "P5 PGM stack or RMT1 tensor")
      ->required();
  c_loss->add_option("--probs", probs_path, "RMT1 BxCxHxW tensor")->required();
  c_loss->add_option("--ignore-index", ignore_index,
                     "label value to ignore (-1: none)");
  add_loss_flags(c_loss);
  c_loss->callback([&]() {
    std::exit(run_guarded([&]() {
      rmi::DenseTensor labels = load_labels(labels_path);
      rmi::DenseTensor probs = rmi::read_rmt1(probs_path);
      if (probs.rank() != 4) {
        throw rmi::ShapeMismatch("probs: expected BxCxHxW, got rank " +
                                 std::to_string(probs.rank()));
      }
      rmi::SegmentationBatch batch{labels, probs,
                                   static_cast<int>(probs.dim(1)),
                                   ignore_index >= 0
                                       ? std::optional<int>(ignore_index)
                                       : std::nullopt};
      rmi::LossReport rep = rmi::compute_loss(batch, loss_params());
      for (const rmi::ClassRecord& r : rep.records) {
        std::cout << json{{"b", r.b},       {"c", r.c},
                          {"n", r.n},       {"d", r.d},
                          {"i_l", r.i_l},   {"logdet_m", r.logdet_m}}
                  << "\n";
      }
      json summary{{"total", rep.total},
                   {"bce", rep.bce},
                   {"rmi", rep.rmi},
                   {"config", config_echo()}};
      summary["config"]["ignore_index"] = ignore_index;
      std::cout << summary.dump(2) << "\n";
      return 0;
    }));
  });

  // gradcheck --------------------------------------------------------
  auto* c_grad = app.add_subcommand(
      "gradcheck", "compare analytic gradients with central differences");
  std::size_t probes = 50;
  double step = 1e-5, threshold = 1e-5;
  int gb = 2, gc = 3, gh = 24, gw = 24;
  c_grad->add_option("--probes", probes, "probed coordinates");
  c_grad->add_option("--step", step, "finite-difference step");
  c_grad->add_option("--threshold", threshold, "max allowed relative error");
  c_grad->add_option("--batch", gb, "batch size");
  c_grad->add_option("--classes", gc, "class count");
  c_grad->add_option("--height", gh, "height");
  c_grad->add_option("--width", gw, "width");
  c_grad->add_option("--seed", seed, "rng seed");
  add_loss_flags(c_grad);
  c_grad->callback([&]() {
    std::exit(run_guarded([&]() {
      if (probes == 0) {
        std::cerr << "error: --probes must be >= 1\n";
        return 2;
      }
      rmi::SplitMix64 rng(seed);
      rmi::DenseTensor labels({static_cast<std::size_t>(gb),
                               static_cast<std::size_t>(gh),
                               static_cast<std::size_t>(gw)});
      for (double& v : labels.values()) {
        v = static_cast<double>(rng.next_below(gc));
      }
      rmi::DenseTensor logits({static_cast<std::size_t>(gb),
                               static_cast<std::size_t>(gc),
                               static_cast<std::size_t>(gh),
                               static_cast<std::size_t>(gw)});
      for (double& v : logits.values()) v = rng.normal();
      rmi::GradCheckReport rep = rmi::gradcheck(
          labels, gc, std::nullopt, logits, loss_params(), probes, step,
          seed ^ 0x1234567ULL);
      json out{{"max_abs_err", rep.max_abs_err},
               {"max_rel_err", rep.max_rel_err},
               {"probe_count", rep.probe_count},
               {"worst_flat_index", rep.worst_flat_index},
               {"threshold", threshold},
               {"pass", rep.max_rel_err <= threshold},
               {"config", config_echo()}};
      out["config"]["batch"] = gb;
      out["config"]["classes"] = gc;
      out["config"]["height"] = gh;
      out["config"]["width"] = gw;
      out["config"]["probes"] = probes;
      out["config"]["step"] = step;
      std::cout << out.dump(2) << "\n";
      return rep.max_rel_err <= threshold ? 0 : 1;
    }));
  });

  // oracle -----------------------------------------------------------
  auto* c_oracle = app.add_subcommand(
      "oracle", "validate the estimator against the Gaussian closed form");
  std::size_t od = 2, on = 100000, oseeds = 20;
  double rho = 0.5;
  c_oracle->add_option("--d", od, "block dimension");
  c_oracle->add_option("--rho", rho, "per-coordinate correlation");
  c_oracle->add_option("--n", on, "samples per seed");
  c_oracle->add_option("--seeds", oseeds, "number of seeds");
  c_oracle->add_option("--seed", seed, "base rng seed");
  c_oracle->add_option("--xi", xi, "diagonal regularizer");
  c_oracle->callback([&]() {
    std::exit(run_guarded([&]() {
      const rmi::oracle::GaussianJoint joint =
          rmi::oracle::GaussianJoint::per_coordinate(od, rho);
      const double exact = rmi::oracle::gaussian_mi(joint);
      std::vector<double> estimates;
      for (std::size_t s = 0; s < oseeds; ++s) {
        rmi::RegionDistribution dist =
            rmi::oracle::sample_joint(joint, on, seed + s);
        rmi::CovarianceStats stats = rmi::estimate_stats(dist);
        rmi::ConditionalCov cc = rmi::conditional_cov(stats, xi);
        estimates.push_back(rmi::full_lower_bound(stats, cc));
      }
      double mean = 0.0;
      for (double e : estimates) mean += e;
      mean /= static_cast<double>(estimates.size());
      double var = 0.0;
      for (double e : estimates) var += (e - mean) * (e - mean);
      const double sd = estimates.size() > 1
                            ? std::sqrt(var / (estimates.size() - 1))
                            : 0.0;
      const bool close = std::abs(mean - exact) <= 0.05;
      const bool bounded = mean <= exact + 3.0 * sd;
      json out{{"exact_mi", exact},
               {"mean_estimate", mean},
               {"std_estimate", sd},
               {"abs_error", std::abs(mean - exact)},
               {"pass_close", close},
               {"pass_lower_bound", bounded},
               {"pass", close && bounded},
               {"config",
                {{"d", od},
                 {"rho", rho},
                 {"n", on},
                 {"seeds", oseeds},
                 {"seed", seed},
                 {"xi", xi}}}};
      std::cout << out.dump(2) << "\n";
      return (close && bounded) ? 0 : 1;
    }));
  });

  // train ------------------------------------------------------------
  auto* c_train = app.add_subcommand("train", "train the toy model");
  rmi::TrainConfig tc;
  std::size_t count = 250, size = 64;
  std::string out_prefix = "run";
  c_train->add_option("--out", out_prefix,
                      "output prefix (<out>.ckpt, <out>.csv)");
  c_train->add_option("--lr", tc.lr, "initial learning rate");
  c_train->add_option("--steps", tc.max_iter, "training steps");
  c_train->add_option("--slow-iters", tc.slow_iters, "warmup steps");
  c_train->add_option("--power", tc.power, "poly decay power");
  c_train->add_option("--batch", tc.batch, "batch size");
  c_train->add_option("--lambda", tc.lambda, "BCE weight");
  c_train->add_option("--df", tc.df, "downsampling factor");
  c_train->add_option("--region-side", tc.region_side, "region side R");
  c_train->add_option("--xi", tc.xi, "diagonal regularizer");
  c_train->add_option("--seed", tc.seed, "seed for data, init and batches");
  c_train->add_option("--count", count, "dataset size (80/20 train/test)");
  c_train->add_option("--size", size, "image side length");
  c_train->callback([&]() {
    std::exit(run_guarded([&]() {
      rmi::ShapesDataset ds = rmi::generate_shapes(count, size, size, tc.seed);
      rmi::TrainResult res = rmi::train(ds, tc);
      json cfg{{"lr", tc.lr},
               {"steps", tc.max_iter},
               {"slow_iters", tc.slow_iters},
               {"power", tc.power},
               {"batch", tc.batch},
               {"lambda", tc.lambda},
               {"df", tc.df},
               {"region_side", tc.region_side},
               {"xi", tc.xi},
               {"seed", tc.seed},
               {"count", count},
               {"size", size}};
      rmi::save_checkpoint(out_prefix + ".ckpt", res.model, cfg);
      std::ofstream csv(out_prefix + ".csv");
      if (!csv) throw rmi::IoError("cannot open " + out_prefix + ".csv");
      csv << "step,lr,bce,rmi,total\n";
      char buf[160];
      for (const rmi::HistoryRow& r : res.history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n",
                      r.step, r.lr, r.bce, r.rmi, r.total);
        csv << buf;
      }
      json out{{"checkpoint", out_prefix + ".ckpt"},
               {"history", out_prefix + ".csv"},
               {"final_total", res.history.back().total},
               {"final_bce", res.history.back().bce},
               {"final_rmi", res.history.back().rmi},
               {"config", cfg}};
      std::cout << out.dump(2) << "\n";
      return 0;
    }));
  });

  // eval -------------------------------------------------------------
  auto* c_eval = app.add_subcommand(
      "eval", "evaluate a checkpoint on the regenerated test split");
  std::string ckpt_path;
  std::uint64_t eval_seed = 1;
  std::size_t ecount = 250, esize = 64;
  c_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  c_eval->add_option("--seed", eval_seed, "dataset seed");
  c_eval->add_option("--count", ecount, "dataset size");
  c_eval->add_option("--size", esize, "image side length");
  c_eval->callback([&]() {
    std::exit(run_guarded([&]() {
      rmi::ConvNet model = rmi::load_checkpoint(ckpt_path);
      rmi::ShapesDataset ds =
          rmi::generate_shapes(ecount, esize, esize, eval_seed);
      rmi::EvalReport rep = rmi::evaluate(model, ds, ds.test);
      json out{{"per_class_iou", rep.per_class_iou},
               {"miou", rep.miou},
               {"pixel_acc", rep.pixel_acc},
               {"boundary_f", rep.boundary_f},
               {"config",
                {{"checkpoint", ckpt_path},
                 {"seed", eval_seed},
                 {"count", ecount},
                 {"size", esize}}}};
      std::cout << out.dump(2) << "\n";
      return 0;
    }));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return 0;
}
