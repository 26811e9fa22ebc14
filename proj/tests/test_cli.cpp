#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "wmnet/checkpoint.hpp"
#include "wmnet/cli.hpp"
#include "wmnet/dataset.hpp"
#include "wmnet/image_io.hpp"

using namespace wmnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "wmnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("wmnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage errors") {
    const Run help = cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("embed") != std::string::npos);
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"embed", "--model", "m"}).code == 2);  // missing required options
  }

  TEST_CASE("attack flag validation") {
    const fs::path dir = scratch("attack");
    save_image(synthetic_image(1, 32), dir / "in.png");
    const std::string in = (dir / "in.png").string(), out = (dir / "out.png").string();

    const Run dropout = cli({"attack", "--type", "dropout", "--image", in, "--out", out});
    CHECK(dropout.code == 2);
    CHECK(dropout.err.find("--original") != std::string::npos);
    CHECK_FALSE(fs::exists(out));

    CHECK(cli({"attack", "--type", "jpeg", "--sigma", "0.2", "--image", in, "--out", out}).code == 2);
    CHECK(cli({"attack", "--type", "gaussian", "--p", "0.2", "--image", in, "--out", out}).code == 2);
    CHECK(cli({"attack", "--type", "jpeg", "--quality", "0", "--image", in, "--out", out}).code == 2);
    CHECK(cli({"attack", "--type", "blur", "--image", in, "--out", out}).code == 2);

    CHECK(cli({"attack", "--type", "salt-pepper", "--p", "0.2", "--seed", "4", "--image", in, "--out",
               out})
              .code == 0);
    const std::string first = read_all(out);
    CHECK(cli({"attack", "--type", "salt-pepper", "--p", "0.2", "--seed", "4", "--image", in, "--out",
               out})
              .code == 0);
    CHECK(read_all(out) == first);

    save_image(synthetic_image(2, 64), dir / "host.png");
    CHECK(cli({"attack", "--type", "dropout", "--original", (dir / "host.png").string(), "--image", in,
               "--out", out})
              .code == 0);
  }

  TEST_CASE("runtime errors exit with 1") {
    const fs::path dir = scratch("runtime");
    const Run r = cli({"extract", "--model", (dir / "none.wmck").string(), "--image",
                       (dir / "none.png").string()});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("wmnet: ", 0) == 0);
  }

  TEST_CASE("train, embed, extract and evaluate end to end") {
    const fs::path dir = scratch("e2e");
    const fs::path data = dir / "data";
    REQUIRE(cli({"synth", "--out", data.string(), "--count", "2", "--seed", "3"}).code == 0);
    CHECK(fs::exists(data / "synth_0001.png"));

    const std::string model = (dir / "m.wmck").string();
    const Run train = cli({"train", "--data", data.string(), "--epochs", "1", "--batch-size", "2",
                           "--no-attack-sim", "--seed", "1", "--out", model, "--log",
                           (dir / "log.tsv").string()});
    REQUIRE(train.code == 0);
    CHECK(fs::exists(model));
    CHECK(fs::exists(model + ".best"));
    const std::string log = read_all(dir / "log.tsv");
    CHECK(log.rfind("epoch\tl1\tl2\tl3\tpsnr\tber\n1\t", 0) == 0);
    CHECK(load_checkpoint(model).metadata.config.epochs == 1);

    CHECK(cli({"train", "--data", data.string(), "--batch-size", "1", "--out", model}).code != 0);

    const std::string hex(64, 'a');
    const std::string marked = (dir / "marked.png").string();
    REQUIRE(cli({"embed", "--model", model, "--image", (data / "synth_0000.png").string(),
                 "--watermark", hex, "--out", marked})
                .code == 0);
    const Run extract = cli({"extract", "--model", model, "--image", marked});
    CHECK(extract.code == 0);
    CHECK(extract.out.size() == 65);
    CHECK(cli({"embed", "--model", model, "--image", marked, "--watermark", "xyz", "--out", marked})
              .code != 0);

    const std::string report = (dir / "report.json").string();
    const Run eval = cli({"evaluate", "--model", model, "--data", data.string(), "--report", report});
    CHECK(eval.code == 0);
    CHECK(eval.out.find("attacked-mean") != std::string::npos);
    CHECK(read_all(report).find("\"attacked_mean_ber\"") != std::string::npos);
  }
}
