#include <filesystem>
#include <string>

#include "CLI11.hpp"

#include "carnot/cli.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Vertical Pontryagin flow on free step-2 Carnot groups"};
    app.require_subcommand(1);

    std::string config;
    std::string out_dir = ".";
    carnot::cli::CommandOptions opt;

    for (const char* name : {"classify", "portrait", "casimir", "spectrum"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "experiment configuration (JSON, version 1)")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_flag("--exact", opt.exact, "rational arithmetic (casimir)");
        sub->add_flag("--polynomial", opt.polynomial, "require the polynomial Casimir C (odd k only)");
    }

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : carnot::cli::exit_usage;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    return carnot::cli::run(command, config, opt, out_dir);
}
