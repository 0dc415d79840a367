#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "amr/dataset.hpp"

using namespace amr;
namespace fs = std::filesystem;

namespace {

const fs::path kOut = fs::temp_directory_path() / "amr_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(AMR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("generate: cardinality, determinism, idempotent rerun") {
    fs::remove_all(kOut);
    const std::string base = "--out " + kOut.string() + " --per-class 2 --snr 0 --snr 10";

    REQUIRE(run("generate " + base) == 0);
    auto ds = load_dataset(kOut / "dataset");
    CHECK(ds.records.size() == 11 * 2 * 2);

    const auto bytes = slurp(kOut / "dataset" / "samples.bin");
    REQUIRE(run("generate " + base + " --force") == 0);
    CHECK(slurp(kOut / "dataset" / "samples.bin") == bytes);  // byte-identical regeneration

    // unchanged config: skipped, artifacts untouched
    const auto t0 = fs::last_write_time(kOut / "dataset" / "samples.bin");
    REQUIRE(run("generate " + base) == 0);
    CHECK(fs::last_write_time(kOut / "dataset" / "samples.bin") == t0);
}

TEST_CASE("generate --per-class 1 --snr 0 emits 11 records") {
    const fs::path out = kOut / "tiny";
    fs::remove_all(out);
    REQUIRE(run("generate --out " + out.string() + " --per-class 1 --snr 0") == 0);
    CHECK(load_dataset(out / "dataset").records.size() == 11);
}

TEST_CASE("transform: cache reuse and --force rebuild") {
    const std::string base = "--out " + kOut.string() + " --per-class 2 --snr 0 --snr 10";
    REQUIRE(run("generate " + base) == 0);
    REQUIRE(run("transform " + base) == 0);
    REQUIRE(fs::exists(kOut / "cache" / "images.bin"));
    const auto bytes = slurp(kOut / "cache" / "images.bin");

    // up-to-date cache skipped; changed kernel keyed differently and rebuilt
    const auto t0 = fs::last_write_time(kOut / "cache" / "images.bin");
    REQUIRE(run("transform " + base) == 0);
    CHECK(fs::last_write_time(kOut / "cache" / "images.bin") == t0);

    REQUIRE(run("transform " + base + " --kernel wvd") == 0);
    CHECK(slurp(kOut / "cache" / "images.bin") != bytes);  // wvd vs cwd differ on noisy input

    REQUIRE(run("transform " + base + " --force") == 0);
    CHECK(slurp(kOut / "cache" / "images.bin") == bytes);
}

TEST_CASE("exit codes: usage 1, missing artifacts 2") {
    CHECK(run("frobnicate") == 1);
    CHECK(run("generate --per-class nope") == 1);

    const fs::path out = kOut / "empty";
    fs::remove_all(out);
    CHECK(run("transform --out " + out.string()) == 2);
    CHECK(run("train --out " + out.string()) == 2);
    CHECK(run("evaluate --out " + out.string()) == 2);
    CHECK(run("report --out " + out.string()) == 2);
}

TEST_CASE("config file: unknown keys rejected, flags override values") {
    const fs::path out = kOut / "cfg";
    fs::remove_all(out);
    fs::create_directories(out);

    {
        std::ofstream f(out / "bad.json");
        f << R"({"dataset": {"per_class_counts": 5}})";
    }
    CHECK(run("generate --config " + (out / "bad.json").string()) == 1);

    {
        std::ofstream f(out / "good.json");
        nlohmann::json j;
        j["dataset"] = {{"per_class_count", 3}, {"snr_grid", {0.0}}};
        j["output_dir"] = out.string();
        f << j.dump();
    }
    REQUIRE(run("generate --config " + (out / "good.json").string() + " --per-class 1") == 0);
    CHECK(load_dataset(out / "dataset").records.size() == 11);  // flag overrode the file

    // effective merged config lands beside the outputs
    REQUIRE(fs::exists(out / "effective_config.json"));
    std::ifstream ec(out / "effective_config.json");
    nlohmann::json eff;
    ec >> eff;
    CHECK(eff["dataset"]["per_class_count"] == 1);
}

TEST_CASE("train/evaluate round trip writes history and confusion artifacts") {
    const fs::path out = kOut / "trainrun";
    fs::remove_all(out);
    const std::string base = "--out " + out.string() + " --per-class 5 --snr 20";
    REQUIRE(run("generate " + base) == 0);
    REQUIRE(run("transform " + base) == 0);
    REQUIRE(run("train " + base + " --epochs 2") == 0);

    const fs::path hist = out / "train" / "snr_p20" / "history.csv";
    REQUIRE(fs::exists(hist));
    std::ifstream f(hist);
    std::string line;
    int rows = 0;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 3);  // header + one row per epoch

    REQUIRE(run("evaluate " + base + " --epochs 2") == 0);
    CHECK(fs::exists(out / "evaluate" / "confusion_p20.csv"));
    CHECK(fs::exists(out / "evaluate" / "accuracy_vs_snr.csv"));
    REQUIRE(run("report " + base + " --epochs 2") == 0);
    CHECK(fs::exists(out / "report" / "report.json"));
    CHECK(fs::exists(out / "report" / "accuracy_vs_snr.svg"));
}
