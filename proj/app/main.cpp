#include "nhic/pipeline.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

int exit_code(const std::string& kind) {
    if (kind == "ConfigInvalid") return 2;
    if (kind == "StageMissing") return 3;
    return 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nhic: singular normally hyperbolic invariant cylinders near a Hamiltonian saddle"};
    app.require_subcommand(1, 1);

    std::string config, out, stage_from;
    int jobs = 0;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"analyze", "saddle spectrum, H1 certificate and local chart"},
        {"homoclinics", "homoclinic library with H2/H3 analysis"},
        {"continue", "periodic orbit families in energy"},
        {"verify", "verification suite"},
        {"export", "mesh and CSV artifacts"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (overrides NHIC_OUT and the config)");
        sub->add_option("--jobs", jobs, "parallel families")->check(CLI::PositiveNumber);
        sub->add_option("--stage-from", stage_from, "first stage to recompute; earlier ones are loaded from disk")
            ->check(CLI::IsMember({"analyze", "homoclinics", "continue", "verify", "export"}));
    }
    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        nhic::Pipeline p(nhic::load_config(config), out, jobs);
        const nhic::Stage to = nhic::stage_from_name(command);
        const nhic::Stage from = stage_from.empty() ? nhic::Stage::Analyze : nhic::stage_from_name(stage_from);
        const auto t0 = std::chrono::steady_clock::now();
        int rc = p.run(to, from);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::filesystem::create_directories(p.out);
        std::ofstream(std::filesystem::path(p.out) / "log.txt", std::ios::app)
            << command << " from " << nhic::stage_name(from) << ": " << secs << " s, exit " << rc << "\n";
        if (!p.checks.empty()) std::cout << nhic::checks_table(p.checks);
        if (to == nhic::Stage::Analyze || to == nhic::Stage::Homoclinics || to == nhic::Stage::Continue) rc = 0;
        std::cout << command << " finished in " << secs << " s; artifacts in " << p.out << "\n";
        if (rc != 0) std::cerr << "CheckFailed: at least one enabled check failed\n";
        return rc;
    } catch (const nhic::Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
