#include <cstdio>
#include <stdexcept>
#include <string>

#include "uhdformer/cli.hpp"
#include "uhdformer/errors.hpp"

namespace uhd {
namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\": expected an integer, got \"" + v + "\"");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size() || v.front() == '-') throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\": expected a non-negative integer, got \"" + v + "\"");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\": expected a number, got \"" + v + "\"");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config key \"" + key + "\": expected 0/1/true/false, got \"" + v + "\"");
}

std::string fmt_f(double v) {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void apply_config_kv(CliConfig& c, const std::string& key, const std::string& value) {
    auto& m = c.model;
    auto& t = c.train;
    if (key == "model.channels") m.channels = parse_i64(key, value);
    else if (key == "model.blocks") m.blocks = parse_i64(key, value);
    else if (key == "model.heads") m.heads = parse_i64(key, value);
    else if (key == "model.squeeze") m.squeeze = parse_i64(key, value);
    else if (key == "model.shuffle") m.shuffle = parse_i64(key, value);
    else if (key == "model.group") m.group = parse_i64(key, value);
    else if (key == "model.dualcmt_in_attn") m.dualcmt_in_attn = parse_bool(key, value);
    else if (key == "model.dualcmt_in_ffn") m.dualcmt_in_ffn = parse_bool(key, value);
    else if (key == "model.max_branch") m.max_branch = parse_bool(key, value);
    else if (key == "model.mean_branch") m.mean_branch = parse_bool(key, value);
    else if (key == "model.dtype") {
        if (value == "f32") m.dtype = DType::F32;
        else if (value == "f64") m.dtype = DType::F64;
        else throw ConfigError("config key \"model.dtype\": expected f32 or f64, got \"" + value + "\"");
    } else if (key == "train.lr0") t.lr0 = parse_f64(key, value);
    else if (key == "train.lr_min") t.lr_min = parse_f64(key, value);
    else if (key == "train.total_steps") t.total_steps = parse_i64(key, value);
    else if (key == "train.batch") t.batch = parse_i64(key, value);
    else if (key == "train.patch") t.patch = parse_i64(key, value);
    else if (key == "train.freq_loss_weight") t.freq_loss_weight = parse_f64(key, value);
    else if (key == "train.seed") t.seed = parse_u64(key, value);
    else if (key == "train.checkpoint_every") t.checkpoint_every = parse_i64(key, value);
    else if (key == "train.checkpoint") t.checkpoint_path = value;
    else if (key == "train.log") c.log_path = value;
    else if (key == "data.manifest") c.manifest = value;
    else throw ConfigError("unknown config key \"" + key + "\"");
}

CliConfig parse_config_text(const std::string& text) {
    CliConfig c;
    size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        const size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value, got \"" +
                              line + "\"");
        apply_config_kv(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

std::string effective_config_text(const CliConfig& c) {
    const auto& m = c.model;
    const auto& t = c.train;
    std::string s;
    s += "model.channels = " + std::to_string(m.channels) + "\n";
    s += "model.blocks = " + std::to_string(m.blocks) + "\n";
    s += "model.heads = " + std::to_string(m.heads) + "\n";
    s += "model.squeeze = " + std::to_string(m.squeeze) + "\n";
    s += "model.shuffle = " + std::to_string(m.shuffle) + "\n";
    s += "model.group = " + std::to_string(m.group) + "\n";
    s += std::string("model.dualcmt_in_attn = ") + (m.dualcmt_in_attn ? "1" : "0") + "\n";
    s += std::string("model.dualcmt_in_ffn = ") + (m.dualcmt_in_ffn ? "1" : "0") + "\n";
    s += std::string("model.max_branch = ") + (m.max_branch ? "1" : "0") + "\n";
    s += std::string("model.mean_branch = ") + (m.mean_branch ? "1" : "0") + "\n";
    s += std::string("model.dtype = ") + (m.dtype == DType::F64 ? "f64" : "f32") + "\n";
    s += "train.lr0 = " + fmt_f(t.lr0) + "\n";
    s += "train.lr_min = " + fmt_f(t.lr_min) + "\n";
    s += "train.total_steps = " + std::to_string(t.total_steps) + "\n";
    s += "train.batch = " + std::to_string(t.batch) + "\n";
    s += "train.patch = " + std::to_string(t.patch) + "\n";
    s += "train.freq_loss_weight = " + fmt_f(t.freq_loss_weight) + "\n";
    s += "train.seed = " + std::to_string(t.seed) + "\n";
    s += "train.checkpoint_every = " + std::to_string(t.checkpoint_every) + "\n";
    if (!t.checkpoint_path.empty()) s += "train.checkpoint = " + t.checkpoint_path + "\n";
    s += "train.log = " + c.log_path + "\n";
    if (!c.manifest.empty()) s += "data.manifest = " + c.manifest + "\n";
    return s;
}

}  // namespace uhd
