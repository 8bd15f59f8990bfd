#include "doctest.h"
#include "nhic/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace nhic;
namespace fs = std::filesystem;

namespace {

const char* kSystem = R"J({"n": 1, "A": [[1.0]], "modes": [{"m": [1], "a": -1.0}], "constant": 1.0})J";

std::string config(double E0, double E_min, double ratio = 0.1) {
    std::ostringstream os;
    os << R"J({"system": "sys.json", "r_factor": 0.5, "homoclinics": {"seeds": [1, -1]},
      "chain": {"order": ["(1)+"]},
      "families": [{"name": "(1)+", "order": ["(1)+"], "energy_sign": 1},
                   {"name": "pair(1)", "order": ["(1)+", "(-1)-"], "energy_sign": -1}],
      "energy": {"E0": )J"
       << E0 << R"J(, "E_min": )J" << E_min << R"J(, "ratio": )J" << ratio << R"J(},
      "verify": {"transit_E_max": 1e-4, "transit_E_min": 1e-10, "transit_points": 9}})J";
    return os.str();
}

fs::path scratch() {
    fs::path d = fs::temp_directory_path() / "nhic_pipeline_test";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "sys.json") << kSystem;
    return d;
}

}  // namespace

TEST_CASE("system file parses into the pendulum") {
    auto m = parse_system(kSystem);
    auto p = HamiltonianModel::pendulum();
    Vec z(2);
    z << 0.3, 0.2;
    CHECK(m.H(z) == doctest::Approx(p.H(z)));
    CHECK_THROWS_WITH_AS(parse_system(R"J({"n": 2, "A": [[1]], "modes": []})J"), doctest::Contains("ConfigInvalid"),
                         Error);
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(parse_config(config(1e-3, 1e-9), "."));
    CHECK_THROWS_WITH_AS(parse_config(config(1e-10, 1e-9), "."), doctest::Contains("ConfigInvalid"), Error);
    CHECK_THROWS_WITH_AS(parse_config(config(1e-3, 1e-9, 1.5), "."), doctest::Contains("ConfigInvalid"), Error);
    CHECK_THROWS_WITH_AS(parse_config("{not json", "."), doctest::Contains("ConfigInvalid"), Error);
    auto c = parse_config(config(1e-3, 1e-9), "/some/dir");
    CHECK(c.system_path == "/some/dir/sys.json");
}

TEST_CASE("stage names") {
    for (Stage s : {Stage::Analyze, Stage::Homoclinics, Stage::Continue, Stage::Verify, Stage::Export})
        CHECK(stage_from_name(stage_name(s)) == s);
    CHECK_THROWS_AS(stage_from_name("bogus"), Error);
}

TEST_CASE("pendulum pipeline end to end and resumed from disk") {
    fs::path d = scratch();
    RunConfig cfg = parse_config(config(1e-3, 1e-9), d.string());
    {
        Pipeline p(cfg, (d / "out").string());
        CHECK(p.run(Stage::Export) == 0);
        CHECK(p.chain.hole_count() == 1);
        for (const char* f : {"analyze.json", "homoclinics.json", "families.json", "verify.json", "verify.txt", "mesh.json"})
            CHECK(fs::exists(d / "out" / f));
    }
    std::string first;
    {
        std::ifstream f(d / "out" / "verify.json");
        first.assign(std::istreambuf_iterator<char>(f), {});
    }
    Pipeline q(cfg, (d / "out").string());
    CHECK(q.run(Stage::Verify, Stage::Verify) == 0);
    CHECK(q.verify_json + "\n" == first);
}

TEST_CASE("missing artifacts raise StageMissing") {
    fs::path d = scratch();
    Pipeline p(parse_config(config(1e-3, 1e-9), d.string()), (d / "empty").string());
    CHECK_THROWS_WITH_AS(p.run(Stage::Verify, Stage::Continue), doctest::Contains("StageMissing"), Error);
}

TEST_CASE("checks table marks failures") {
    std::vector<CheckResult> cs{{"a", 1.0, "< 2", true, false, ""}, {"b", 3.0, "< 2", false, false, ""}};
    auto t = checks_table(cs);
    CHECK(t.find("PASS") != std::string::npos);
    CHECK(t.find("FAIL") != std::string::npos);
    CHECK(t.find("2 checks, 1 failed") != std::string::npos);
}
