#include <iostream>

#include <CLI11.hpp>

#include "tokenecon/cli.hpp"

namespace cli = tokenecon::cli;

int main(int argc, char** argv) {
    CLI::App app{"Token toll design and simulation for dynamic congestion games"};
    app.require_subcommand(1);
    cli::RunConfig rc;

    auto common = [&](CLI::App* sub) {
        sub->add_option("scenario", rc.scenario, "scenario TOML file")->required();
        sub->add_option("-o,--out", rc.out, "output directory (relative paths resolve under $TOKENECON_OUTPUT_ROOT)");
        sub->add_flag("--heavy", rc.allow_heavy, "allow presets flagged heavy");
    };
    auto timing = [&](CLI::App* sub) {
        sub->add_option("--horizon", rc.horizon, "horizon in units of 1/Rr")->check(CLI::PositiveNumber);
        sub->add_option("--samples", rc.samples, "number of sample intervals")->check(CLI::PositiveNumber);
        sub->add_option("--tolls", rc.tolls, "toll-map CSV (default: <out>/tolls.csv)");
        sub->add_option("--seeds", rc.seeds, "seed list");
    };

    auto* design = app.add_subcommand("design", "solve the system optimum and design integer tolls");
    common(design);

    auto* simulate = app.add_subcommand("simulate", "simulate under designed or zero tolls");
    common(simulate);
    timing(simulate);
    simulate->add_option("--mode", rc.mode, "meanfield or population")
        ->check(CLI::IsMember({"meanfield", "population"}));
    simulate->add_flag("--baseline-zero-tolls", rc.baseline_zero_tolls, "simulate the untolled baseline");
    simulate->add_flag("!--no-baseline", rc.with_baseline, "skip the zero-toll comparison run");
    simulate->add_option("-N,--population", rc.population, "population size")->check(CLI::PositiveNumber);

    auto* compare = app.add_subcommand("compare", "population vs mean-field distance over an N sweep");
    common(compare);
    timing(compare);
    compare->add_option("--sweep", rc.sweep, "population sizes");
    compare->add_flag("--baseline-zero-tolls", rc.baseline_zero_tolls, "compare under zero tolls");

    auto* validate = app.add_subcommand("validate", "check the model assumptions of a scenario");
    common(validate);
    validate->add_option("--tolls", rc.tolls, "toll-map CSV to validate against");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kConfigError;
    }

    return cli::guarded([&] {
        if (*design) return cli::cmd_design(rc);
        if (*simulate) return cli::cmd_simulate(rc);
        if (*compare) return cli::cmd_compare(rc);
        return cli::cmd_validate(rc);
    });
}
