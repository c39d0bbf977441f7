#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "lsas/image_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "lsas_cli_test";

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  fs::create_directories(kWork);
  const fs::path log = kWork / "stdout.txt";
  const std::string cmd = "cd '" + kWork.string() + "' && '" LSAS_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("params reports the vanilla ResNet164 size") {
  const auto r = run("params --depth 164 --attention none");
  CHECK(r.code == 0);
  CHECK(r.out.find("1703258") != std::string::npos);
  CHECK(r.out.find("1.70") != std::string::npos);
  CHECK(r.out.find("# effective configuration") != std::string::npos);
}

TEST_CASE("synth-ae is byte-identical across runs") {
  fs::remove_all(kWork / "a");
  fs::remove_all(kWork / "b");
  REQUIRE(run("synth-ae --seed 7 --count 120 --out a").code == 0);
  REQUIRE(run("synth-ae --seed 7 --count 120 --out b").code == 0);
  const auto a = tree(kWork / "a"), b = tree(kWork / "b");
  CHECK(a.size() == 120 * 3 + 1);
  CHECK(a == b);
}

TEST_CASE("ae matches a brute-force pixel count") {
  fs::remove_all(kWork / "d");
  REQUIRE(run("synth-ae --seed 3 --count 40 --size 24 --out d").code == 0);
  const auto r = run("ae --annotations d --heatmaps d/heatmaps --lambda 0.8 --out rep");
  REQUIRE(r.code == 0);

  int hits = 0, total = 0;
  std::map<std::string, int> expected;
  for (const auto& e : fs::directory_iterator(kWork / "d" / "heatmaps")) {
    const std::string stem = e.path().stem().string();
    const auto heat = lsas::read_png(e.path());
    const auto mask = lsas::read_png(kWork / "d" / (stem + ".mask.png"));
    std::vector<int> sorted(heat.pixels.begin(), heat.pixels.end());
    std::sort(sorted.rbegin(), sorted.rend());
    const std::size_t k = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(sorted.size())));
    const int threshold = sorted[k - 1];
    int in_m = 0, in_both = 0;
    for (std::size_t i = 0; i < heat.pixels.size(); ++i) {
      if (heat.pixels[i] < threshold) continue;
      ++in_m;
      in_both += mask.pixels[i] != 0;
    }
    // Integer form of in_both / in_m > 0.8.
    const int aes = 5 * in_both > 4 * in_m ? 1 : 0;
    expected[stem] = aes;
    hits += aes;
    ++total;
  }
  REQUIRE(total == 40);

  std::ifstream report(kWork / "rep" / "ae_report.tsv");
  std::string line;
  std::getline(report, line);
  int rows = 0;
  std::string trailer_ae;
  while (std::getline(report, line)) {
    if (line.rfind("# ae_percent", 0) == 0) trailer_ae = line.substr(line.find('\t') + 1);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    std::string ref;
    int label = 0, aes = 0;
    double ratio = 0;
    std::getline(f, ref, '\t');
    f >> label >> ratio >> aes;
    CAPTURE(ref);
    CHECK(aes == expected.at(ref));
    ++rows;
  }
  CHECK(rows == 40);
  char want[32];
  std::snprintf(want, sizeof want, "%.2f", 100.0 * hits / total);
  CHECK(trailer_ae == want);
}

TEST_CASE("flags override config file values") {
  {
    std::ofstream cfg(kWork / "bench.ini");
    cfg << "depth = 83\nattention = eca\n[bench]\nbatch-size = 2\n";
  }
  const auto r = run("params --config bench.ini --attention srm");
  CHECK(r.code == 0);
  CHECK(r.out.find("depth=83") != std::string::npos);
  CHECK(r.out.find("attention=\"srm\"") != std::string::npos);
  {
    std::ofstream cfg(kWork / "typo.ini");
    cfg << "dpeth = 83\n";
  }
  const auto bad = run("params --config typo.ini");
  CHECK(bad.code == 3);
  CHECK(bad.out.find("dpeth") != std::string::npos);
}

TEST_CASE("exit codes separate failure categories") {
  CHECK(run("params --bogus-flag 1").code == 2);
  CHECK(run("params --config missing.ini").code == 3);
  CHECK(run("params --depth 100").code == 3);
  const auto data = run("train --dataset cifar10 --data-dir nowhere --epochs 1");
  CHECK(data.code == 4);
  CHECK(data.out.find("error[data]") != std::string::npos);
  CHECK(run("gradcam --checkpoint nothing.ckpt").code == 4);
}

TEST_CASE("help lists defaults") {
  const auto r = run("train --help");
  CHECK(r.code == 0);
  for (const char* flag : {"--dataset", "--depth", "--attention", "--order", "--mu", "--epochs", "--batch-size", "--lr",
                           "--seed", "--out", "--checkpoint"}) {
    CAPTURE(flag);
    CHECK(r.out.find(flag) != std::string::npos);
  }
  CHECK(r.out.find("164") != std::string::npos);
  CHECK(r.out.find("0.1") != std::string::npos);
}
