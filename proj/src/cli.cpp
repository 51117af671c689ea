#include "uhdformer/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uhdformer/checkpoint.hpp"
#include "uhdformer/errors.hpp"
#include "uhdformer/fs.hpp"
#include "uhdformer/image_io.hpp"
#include "uhdformer/metrics.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/parallel.hpp"
#include "uhdformer/selfcheck.hpp"

namespace uhd {
namespace {

namespace fs = std::filesystem;

std::string strf(const char* fmt, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return buf;
}

std::string read_text_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void apply_overrides(CliConfig& c, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override \"" + s + "\": expected key=value");
        apply_config_kv(c, s.substr(0, eq), s.substr(eq + 1));
    }
}

struct ManifestEntry {
    std::string clean, degraded;  // resolved paths
};

// Manifest: one pair per line, tab-separated clean path, degraded path, and
// an optional free-form draw record. Relative paths resolve against the
// manifest's own directory, so a dataset directory can be moved wholesale.
std::vector<ManifestEntry> read_manifest(const std::string& path) {
    const std::string text = read_text_file(path);
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    std::vector<ManifestEntry> out;
    size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        const size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t t1 = line.find('\t');
        if (t1 == std::string::npos)
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": expected clean<TAB>degraded[<TAB>draw]");
        const size_t t2 = line.find('\t', t1 + 1);
        const std::string clean = line.substr(0, t1);
        const std::string degraded =
            t2 == std::string::npos ? line.substr(t1 + 1) : line.substr(t1 + 1, t2 - t1 - 1);
        out.push_back({resolve(clean), resolve(degraded)});
    }
    return out;
}

std::vector<ImagePair> load_pairs(const std::vector<ManifestEntry>& entries, DType dt) {
    std::vector<ImagePair> pairs;
    for (const auto& e : entries)
        pairs.push_back({image_to_tensor(read_image(e.clean), dt), image_to_tensor(read_image(e.degraded), dt)});
    return pairs;
}

UHDformer model_from_checkpoint(const std::string& ckpt, const std::string& config_path,
                                const std::vector<std::string>& sets) {
    UHDformerConfig mc;
    if (!config_path.empty()) {
        CliConfig c = parse_config_text(read_text_file(config_path));
        apply_overrides(c, sets);
        mc = c.model;
    } else {
        mc = checkpoint_config(ckpt);
    }
    mc.validate();
    Rng rng(0);  // weights are about to be replaced
    UHDformer m = build_model(mc, rng);
    load_checkpoint(m, ckpt);
    return m;
}

int cmd_synth(const std::string& in_dir, const std::string& out_dir, const std::string& kind,
              uint64_t seed, std::ostream& out) {
    DegradationSpec spec;
    spec.kind = degradation_from_name(kind);

    std::vector<fs::path> inputs;
    if (!fs::is_directory(in_dir)) throw IoError("synth: \"" + in_dir + "\" is not a directory");
    for (const auto& entry : fs::directory_iterator(in_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".ppm") inputs.push_back(entry.path());
    }
    if (inputs.empty())
        throw ConfigError("synth: no .png or .ppm images in \"" + in_dir + "\"");
    std::sort(inputs.begin(), inputs.end());

    fs::create_directories(out_dir);
    std::string manifest;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor clean = image_to_tensor(read_image(inputs[i].string()));
        Rng rng = Rng::substream(seed, {Rng::hash_label("synth"), i});
        DegradationDraw draw;
        Tensor degraded = synth_degrade(clean, spec, rng, &draw);
        const std::string base = strf("%03zu_%s", i, inputs[i].stem().string().c_str());
        const std::string cname = base + "_clean.png", dname = base + "_degraded.png";
        write_image((fs::path(out_dir) / cname).string(), tensor_to_image(clean));
        write_image((fs::path(out_dir) / dname).string(), tensor_to_image(degraded));
        manifest += cname + "\t" + dname + "\t" + draw.str() + "\n";
        out << "  " << base << ": " << draw.str() << "\n";
    }
    atomic_write_text((fs::path(out_dir) / "manifest.tsv").string(), manifest);
    out << "wrote " << inputs.size() << " pairs + manifest.tsv to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, std::ostream& out) {
    CliConfig c = parse_config_text(read_text_file(config_path));
    apply_overrides(c, sets);
    c.model.validate();
    c.train.validate(c.model);
    if (c.train.checkpoint_path.empty()) c.train.checkpoint_path = "model.ckpt";
    if (c.manifest.empty()) throw ConfigError("train: data.manifest is required");

    const std::string effective = effective_config_text(c);
    out << "effective config:\n";
    size_t pos = 0;
    while (pos < effective.size()) {
        const size_t nl = effective.find('\n', pos);
        out << "  " << effective.substr(pos, nl - pos) << "\n";
        pos = nl + 1;
    }

    const auto pairs = load_pairs(read_manifest(c.manifest), c.model.dtype);
    Rng mr = Rng::substream(c.train.seed, "model-init");
    UHDformer m = build_model(c.model, mr);
    out << "training on " << pairs.size() << " pairs, " << c.train.total_steps << " steps\n";
    const TrainReport rep = train_on_pairs(m, pairs, c.train);

    std::string log;
    pos = 0;
    while (pos < effective.size()) {
        const size_t nl = effective.find('\n', pos);
        log += "# " + effective.substr(pos, nl - pos) + "\n";
        pos = nl + 1;
    }
    log += "# step\tlr\tloss\n";
    for (const auto& line : rep.log_lines) log += line + "\n";
    atomic_write_text(c.log_path, log);

    out << strf("baseline psnr %.4f dB -> final psnr %.4f dB in %.1f s\n", rep.baseline_psnr,
                rep.final_psnr, rep.wall_seconds);
    if (!rep.lrs.empty())
        out << strf("lr schedule %.9g -> %.9g over %zu steps\n", rep.lrs.front(), rep.lrs.back(),
                    rep.lrs.size());
    out << "checkpoint: " << c.train.checkpoint_path << "\nlog: " << c.log_path << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& in_path, const std::string& out_path,
              const std::string& config_path, const std::vector<std::string>& sets, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    UHDformer m = model_from_checkpoint(ckpt, config_path, sets);
    Tensor x = image_to_tensor(read_image(in_path), m.cfg.dtype);
    Tensor y = clamp01(model_forward_padded(m, x));
    write_image(out_path, tensor_to_image(y));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << strf("restored %s -> %s (%lldx%lld) in %.2f s\n", in_path.c_str(), out_path.c_str(),
                static_cast<long long>(x.shape().w()), static_cast<long long>(x.shape().h()), secs);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& record_path,
             std::ostream& out) {
    UHDformer m = model_from_checkpoint(ckpt, "", {});
    const auto entries = read_manifest(manifest_path);
    if (entries.empty()) throw ConfigError("eval: manifest \"" + manifest_path + "\" lists no pairs");
    const auto pairs = load_pairs(entries, m.cfg.dtype);
    const EvalResult ev = evaluate(m, pairs);

    out << strf("%-5s %-32s %10s %8s\n", "pair", "clean", "psnr", "ssim");
    std::string record = "pair\tpsnr\tssim\n";
    for (size_t i = 0; i < pairs.size(); ++i) {
        const std::string name = fs::path(entries[i].clean).filename().string();
        out << strf("%-5zu %-32s %10.4f %8.4f\n", i, name.c_str(), ev.psnrs[i], ev.ssims[i]);
        record += strf("%zu\t%.17g\t%.17g\n", i, ev.psnrs[i], ev.ssims[i]);
    }
    out << strf("%-5s %-32s %10.4f %8.4f\n", "mean", "", ev.mean_psnr, ev.mean_ssim);
    record += strf("mean\t%.17g\t%.17g\n", ev.mean_psnr, ev.mean_ssim);
    atomic_write_text(record_path, record);
    out << "record: " << record_path << "\n";
    return 0;
}

int cmd_selftest(const std::string& level, bool inject_fault, std::ostream& out, std::ostream& err) {
    if (level != "quick" && level != "full")
        throw ConfigError("selftest: unknown level \"" + level + "\" (expected quick or full)");
    if (inject_fault) {
        hooks::corrupt_conv_weight_grad = true;
        out << "fault injection armed: conv weight gradients negated\n";
    }
    SelfTestOptions opts;
    opts.full = level == "full";
    opts.log = &out;
    const SelfTestReport rep = run_selftest(opts);
    size_t passed = 0;
    std::string failed;
    for (const auto& c : rep.checks) {
        if (c.pass) ++passed;
        else failed += (failed.empty() ? "" : ", ") + c.name;
    }
    out << strf("SELFTEST %s (%zu/%zu)\n", rep.all_pass() ? "PASS" : "FAIL", passed, rep.checks.size());
    if (!rep.all_pass()) {
        err << "selftest failed: " << failed << "\n";
        return 3;
    }
    return 0;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& sets, std::ostream& out) {
    CliConfig c;
    if (!config_path.empty()) c = parse_config_text(read_text_file(config_path));
    apply_overrides(c, sets);
    c.model.validate();

    auto total_for = [](UHDformerConfig cfg) {
        Rng rng(0);
        return param_count(build_model(cfg, rng)).total;
    };
    Rng rng(0);
    const ParamBreakdown pb = param_count(build_model(c.model, rng));
    out << "trainable parameters: " << pb.total << "\n";
    for (const auto& [label, n] : pb.sections) out << strf("  %-10s %8lld\n", label.c_str(),
                                                           static_cast<long long>(n));

    out << "variants:\n";
    struct Variant {
        const char* label;
        bool attn, ffn, maxb, meanb;
    };
    const Variant variants[] = {
        {"full model", true, true, true, true},
        {"matching off everywhere", false, false, true, true},
        {"matching off in attention", false, true, true, true},
        {"matching off in feed-forward", true, false, true, true},
        {"max-pool branch off", true, true, false, true},
        {"mean-pool branch off", true, true, true, false},
    };
    for (const auto& v : variants) {
        UHDformerConfig cfg = c.model;
        cfg.dualcmt_in_attn = v.attn;
        cfg.dualcmt_in_ffn = v.ffn;
        cfg.max_branch = v.maxb;
        cfg.mean_branch = v.meanb;
        out << strf("  %-30s %8lld\n", v.label, static_cast<long long>(total_for(cfg)));
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"uhdformer: two-path image restoration at desk scale"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker thread cap (default: all cores)");

    std::string in_dir, out_dir, kind = "lowlight";
    uint64_t seed = 0;
    auto* synth = app.add_subcommand("synth", "degrade clean images into training pairs");
    synth->add_option("--in", in_dir, "directory of clean .png/.ppm images")->required();
    synth->add_option("--out", out_dir, "output directory for pairs + manifest.tsv")->required();
    synth->add_option("--kind", kind, "degradation: lowlight, haze or blur");
    synth->add_option("--seed", seed, "stream seed for the degradation draws");

    std::string config_path;
    std::vector<std::string> sets;
    auto* train = app.add_subcommand("train", "train from a pair manifest");
    train->add_option("--config", config_path, "config file (model.*, train.*, data.* keys)")->required();
    train->add_option("--set", sets, "override, e.g. --set train.total_steps=100");

    std::string ckpt, in_img, out_img, infer_config;
    std::vector<std::string> infer_sets;
    auto* infer = app.add_subcommand("infer", "restore one image with a checkpoint");
    infer->add_option("--ckpt", ckpt, "checkpoint file")->required();
    infer->add_option("--in", in_img, "degraded input image")->required();
    infer->add_option("--out", out_img, "restored output image")->required();
    infer->add_option("--config", infer_config,
                      "rebuild from this config instead of the checkpoint's own");
    infer->add_option("--set", infer_sets, "config override for --config");

    std::string eval_ckpt, eval_manifest, record_path = "eval_record.tsv";
    auto* eval = app.add_subcommand("eval", "score a checkpoint over a pair manifest");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--manifest", eval_manifest, "pair manifest")->required();
    eval->add_option("--record", record_path, "machine-readable result file");

    std::string level = "quick";
    bool inject_fault = false;
    auto* selftest = app.add_subcommand("selftest", "run the invariant suite");
    selftest->add_option("--level", level, "quick (seconds) or full (runs training checks)");
    selftest->add_flag("--inject-fault", inject_fault)->group("");  // negative-control hook

    std::string params_config;
    std::vector<std::string> params_sets;
    auto* params = app.add_subcommand("params", "print the parameter budget and variants");
    params->add_option("--config", params_config, "config file (defaults used when omitted)");
    params->add_option("--set", params_sets, "config override");

    for (auto* sub : {synth, train, infer, eval, selftest, params}) sub->fallthrough();

    std::vector<const char*> argv;
    argv.push_back("uhdformer");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (threads > 0) set_num_threads(threads);
        if (synth->parsed()) return cmd_synth(in_dir, out_dir, kind, seed, out);
        if (train->parsed()) return cmd_train(config_path, sets, out);
        if (infer->parsed()) return cmd_infer(ckpt, in_img, out_img, infer_config, infer_sets, out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_manifest, record_path, out);
        if (selftest->parsed()) return cmd_selftest(level, inject_fault, out, err);
        if (params->parsed()) return cmd_params(params_config, params_sets, out);
        err << "error: no command given\n";
        return 1;
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const SizeError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace uhd
