#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "gibrss/cli.hpp"
#include "gibrss/errors.hpp"
#include "gibrss/kernels.hpp"

using namespace gibrss;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-graph segmentation with a graph information bottleneck"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data, image, sweep;
  std::optional<std::uint64_t> seed;
  bool force = false;
  int count = 8;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, log and metrics");
  train->add_option("--config", config, "key=value config file")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out, "output directory (default: config 'out')");
  train->add_flag("--force", force, "replace an existing output directory");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  evalc->add_option("--checkpoint", checkpoint)->required();
  evalc->add_option("--data", data, "manifest.json or its directory")->required();
  evalc->add_option("--out", out, "write report.txt and per_class.csv here");

  auto* segment = app.add_subcommand("segment", "write label map, color map and overlay for one image");
  segment->add_option("--checkpoint", checkpoint)->required();
  segment->add_option("--image", image, "binary PPM")->required();
  segment->add_option("--out", out)->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate a grid of configurations");
  ablate->add_option("--config", config)->required();
  ablate->add_option("--sweep", sweep, "sweep file")->required();
  ablate->add_option("--out", out, "CSV path (default: stdout)");

  auto* dump = app.add_subcommand("graph-dump", "dump the patch graph of every stage as JSON");
  dump->add_option("--config", config)->required();
  dump->add_option("--image", image, "binary PPM")->required();
  dump->add_option("--checkpoint", checkpoint, "use trained weights instead of the config's initialization");
  dump->add_option("--out", out, "JSON path (default: stdout)");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--config", config, "takes image_size, classes and synth_seed from here");
  synth->add_option("--count", count, "number of images")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", seed);
  synth->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  kernels::apply_thread_cap();
  try {
    if (*train) {
      cli::RunConfig cfg = cli::load_config(config);
      if (seed) cfg.model.seed = *seed;
      cli::cmd_train(cfg, out.empty() ? cfg.out : out, force);
      std::cout << slurp((std::filesystem::path(out.empty() ? cfg.out : out) / "metrics.txt").string());
    } else if (*evalc) {
      const auto r = cli::cmd_eval(checkpoint, data, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out));
      std::cout << r.text;
    } else if (*segment) {
      cli::cmd_segment(checkpoint, image, out);
    } else if (*ablate) {
      const cli::RunConfig cfg = cli::load_config(config);
      const auto spec = cli::parse_sweep(slurp(sweep), cfg);
      emit(cli::sweep_csv(cli::run_sweep(cfg, spec)), out);
    } else if (*dump) {
      const cli::RunConfig cfg = cli::load_config(config);
      const seg::SegModel model = checkpoint.empty() ? seg::build_model(cfg.model) : seg::load_checkpoint(checkpoint);
      emit(cli::graph_dump(model, data::read_ppm(image)), out);
    } else if (*synth) {
      cli::RunConfig cfg = config.empty() ? cli::RunConfig{} : cli::load_config(config);
      data::Dataset ds;
      ds.classes = cfg.model.classes;
      ds.items = data::synth_dataset(count, cfg.model.image_size, cfg.model.classes, seed.value_or(cfg.synth_seed));
      data::write_dataset(out, ds);
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
