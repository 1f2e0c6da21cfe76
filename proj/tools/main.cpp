#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ursct/checkpoint.hpp"
#include "ursct/config.hpp"
#include "ursct/data.hpp"
#include "ursct/errors.hpp"
#include "ursct/gradcheck.hpp"
#include "ursct/image_io.hpp"
#include "ursct/metrics.hpp"
#include "ursct/model.hpp"
#include "ursct/trainer.hpp"

namespace fs = std::filesystem;
using namespace ursct;

namespace {

// exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 numeric, 1 internal
int run_guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << std::endl;
        return 3;
    } catch (const DimensionError& e) {
        std::cerr << "error: config: " << e.what() << std::endl;
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: config: " << e.what() << std::endl;
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << std::endl;
        return 4;
    } catch (const IoError& e) {
        std::cerr << "error: data: " << e.what() << std::endl;
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << std::endl;
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << std::endl;
        return 1;
    }
}

TrainConfig load_run_config(const std::string& config_path, const std::vector<std::string>& sets) {
    auto map = parse_config_file(config_path);
    apply_seed_env(map);  // file beats env; --set beats both
    apply_overrides(map, sets);
    auto cfg = make_train_config(map);
    std::cout << render_config(effective_config(cfg)) << std::flush;
    return cfg;
}

std::vector<std::string> collect_inputs(const std::string& input) {
    std::vector<std::string> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input)) {
            if (!e.is_regular_file()) continue;
            auto ext = e.path().extension().string();
            for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no images found in '" + input + "'");
    } else if (fs::is_regular_file(input)) {
        files.push_back(input);
    } else {
        throw DataError("input path '" + input + "' does not exist");
    }
    return files;
}

int cmd_enhance(const std::string& ckpt, const std::string& input, const std::string& output) {
    auto model = model_from_checkpoint(load_checkpoint(ckpt));
    const auto& mc = model.config();
    auto files = collect_inputs(input);
    fs::create_directories(output);
    for (const auto& file : files) {
        auto img = resize_bilinear(load_image(file), mc.image_h, mc.image_w);
        auto out = model.forward(reshape(img, {1, 3, mc.image_h, mc.image_w}), false, nullptr);
        const auto dst = (fs::path(output) / (fs::path(file).stem().string() + ".png")).string();
        save_image(reshape(out, {3, mc.image_h, mc.image_w}), dst);
        std::cout << file << " -> " << dst << "\n";
    }
    std::cout << "enhanced " << files.size() << " image(s)" << std::endl;
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset, bool full_reference,
             const std::string& report_path, int threads, int msssim_levels,
             const std::string& ssim_mode) {
    auto model = model_from_checkpoint(load_checkpoint(ckpt));
    const auto& mc = model.config();

    const auto raw_dir = (fs::path(dataset) / "raw").string();
    std::optional<std::string> ref_dir;
    if (full_reference) ref_dir = (fs::path(dataset) / "reference").string();
    auto index = scan_paired_dataset(raw_dir, ref_dir, mc.image_h, mc.image_w, full_reference);

    auto enhancer = [&model, &mc](const Tensor<float>& raw) {
        auto out = model.forward(reshape(raw, {1, 3, mc.image_h, mc.image_w}), false, nullptr);
        return reshape(out, {3, mc.image_h, mc.image_w});
    };
    EvalOptions opts;
    opts.full_reference = full_reference;
    opts.msssim_levels = msssim_levels;
    opts.ssim_mode = ssim_mode_from_string(ssim_mode);
    opts.threads = threads;
    auto report = evaluate_dataset(index, enhancer, opts);
    write_report_csv(report, report_path);

    std::cout << "evaluated " << report.count << " image(s); report written to " << report_path
              << "\n";
    auto show = [](const char* name, const std::optional<double>& v) {
        if (v) std::printf("mean %s: %.6f\n", name, *v);
    };
    show("psnr", report.mean.psnr);
    show("ssim", report.mean.ssim);
    show("ms_ssim", report.mean.ms_ssim);
    show("uiqm", report.mean.uiqm);
    show("uciqe", report.mean.uciqe);
    return 0;
}

int print_cases(const std::vector<GradCheckCase>& cases, bool& all_pass) {
    for (const auto& c : cases) {
        std::printf("%-32s %12.3e %9.0e  %s\n", c.name.c_str(), c.max_rel_err, c.tol,
                    c.pass ? "PASS" : "FAIL");
        all_pass = all_pass && c.pass;
    }
    return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
    bool all_pass = true;
    std::printf("%-32s %12s %9s  %s\n", "case", "max_rel_err", "tol", "status");
    if (module == "all" || module == "tensor") print_cases(gradcheck_tensor_ops(seed), all_pass);
    if (module == "all" || module == "losses") print_cases(gradcheck_losses(seed), all_pass);
    if (module == "all" || module == "model") print_cases(gradcheck_model(seed), all_pass);
    if (!all_pass) throw NumericError("gradient check failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"URSCT underwater image enhancement"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, input_path, output_path, dataset_path, report_path;
    std::string out_dir, module = "all", ssim_mode = "luminance";
    std::vector<std::string> sets;
    std::optional<std::string> resume;
    bool full_reference = false, no_reference = false;
    int threads = 1, msssim_levels = 5;
    std::uint64_t gradcheck_seed = 1;

    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", config_path, "Config file")->required();
    train_cmd->add_option("--set", sets, "Override config keys (key=value)");
    train_cmd->add_option("--resume", resume, "Resume from a checkpoint");

    auto* enhance_cmd = app.add_subcommand("enhance", "Enhance images with a trained model");
    enhance_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    enhance_cmd->add_option("--input", input_path, "Image file or directory")->required();
    enhance_cmd->add_option("--output", output_path, "Output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Score a dataset");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval_cmd->add_option("--dataset", dataset_path, "Dataset root (raw/ + reference/)")->required();
    auto* fr = eval_cmd->add_flag("--full-reference", full_reference, "Score against references");
    auto* nr = eval_cmd->add_flag("--no-reference", no_reference, "Score without references");
    fr->excludes(nr);
    eval_cmd->add_option("--report", report_path, "Output CSV path")->required();
    eval_cmd->add_option("--threads", threads, "Worker threads (default 1, deterministic)");
    eval_cmd->add_option("--msssim-levels", msssim_levels, "MS-SSIM pyramid depth");
    eval_cmd->add_option("--ssim-mode", ssim_mode, "luminance|rgb_mean");

    auto* ablate_cmd = app.add_subcommand("ablate", "Run the module/loss ablation grid");
    ablate_cmd->add_option("--config", config_path, "Config file")->required();
    ablate_cmd->add_option("--set", sets, "Override config keys (key=value)");
    ablate_cmd->add_option("--out", out_dir, "Output directory")->required();

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    gradcheck_cmd->add_option("--module", module, "all|tensor|model|losses")
        ->check(CLI::IsMember({"all", "tensor", "model", "losses"}));
    gradcheck_cmd->add_option("--seed", gradcheck_seed, "Probe RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << std::endl;
        return 2;
    }

    return run_guarded([&]() -> int {
        if (*train_cmd) {
            auto cfg = load_run_config(config_path, sets);
            auto result = train(cfg, resume);
            std::printf("trained %llu step(s); final loss %.6g; checkpoint %s\n",
                        static_cast<unsigned long long>(result.steps), result.final_loss,
                        result.final_checkpoint.c_str());
            return 0;
        }
        if (*enhance_cmd) return cmd_enhance(checkpoint_path, input_path, output_path);
        if (*eval_cmd) {
            if (!full_reference && !no_reference) {
                std::cerr << "error: usage: eval needs --full-reference or --no-reference"
                          << std::endl;
                return 2;
            }
            return cmd_eval(checkpoint_path, dataset_path, full_reference, report_path, threads,
                            msssim_levels, ssim_mode);
        }
        if (*ablate_cmd) {
            auto cfg = load_run_config(config_path, sets);
            auto table = ablate(cfg, out_dir);
            for (const auto& row : table.rows) {
                std::printf("%-22s %-14s psnr %8.4f  ssim %6.4f\n", row.section.c_str(),
                            row.cell.c_str(), row.psnr, row.ssim);
            }
            return 0;
        }
        if (*gradcheck_cmd) return cmd_gradcheck(module, gradcheck_seed);
        return 2;
    });
}
