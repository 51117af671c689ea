#include "uhdformer/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "uhdformer/fs.hpp"

namespace uhd {

namespace {

constexpr char kMagic[8] = {'U', 'H', 'D', 'F', 'K', 'P', 'T', '1'};
constexpr uint8_t kDtypeF32 = 0;

void push_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void push_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void push_entry(std::vector<uint8_t>& out, const std::string& name, const Tensor& t) {
    push_u32(out, uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF32);
    for (int i = 0; i < 4; ++i) push_u64(out, uint64_t(t.shape()[i]));
    for (int64_t i = 0; i < t.numel(); ++i) {
        const float v = float(t.at(i));
        uint8_t b[4];
        std::memcpy(b, &v, 4);
        out.insert(out.end(), b, b + 4);
    }
}

struct Reader {
    const std::vector<uint8_t>& d;
    const std::string& path;
    size_t off = 0;

    void need(size_t n) const {
        if (off + n > d.size())
            throw FormatError(path + ": truncated checkpoint at byte " + std::to_string(d.size()));
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(d[off + size_t(i)]) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(d[off + size_t(i)]) << (8 * i);
        off += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return d[off++];
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(d.data() + off), n);
        off += n;
        return s;
    }
};

struct RawEntry {
    std::string name;
    Shape shape{0, 0, 0, 0};
    std::vector<float> data;
};

struct ParsedCheckpoint {
    UHDformerConfig cfg;
    std::vector<RawEntry> params;  // registry entries, file order
    std::vector<RawEntry> opt;     // "opt."-prefixed entries
};

ParsedCheckpoint parse(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    Reader r{bytes, path};
    const std::string magic = r.str(8);
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw FormatError(path + ": not a checkpoint (magic mismatch at byte 0)");

    ParsedCheckpoint out;
    out.cfg = config_from_text(r.str(r.u32()));
    const uint32_t n_entries = r.u32();
    std::unordered_map<std::string, bool> seen;
    for (uint32_t e = 0; e < n_entries; ++e) {
        RawEntry entry;
        entry.name = r.str(r.u32());
        if (seen.count(entry.name))
            throw FormatError(path + ": duplicate entry " + entry.name);
        seen[entry.name] = true;
        const uint8_t code = r.u8();
        if (code != kDtypeF32)
            throw FormatError(path + ": unsupported dtype code " + std::to_string(code) + " for " + entry.name);
        int64_t dims[4];
        for (auto& dim : dims) dim = int64_t(r.u64());
        entry.shape = Shape(dims[0], dims[1], dims[2], dims[3]);
        const int64_t numel = entry.shape.numel();
        entry.data.resize(size_t(numel));
        r.need(size_t(numel) * 4);
        std::memcpy(entry.data.data(), bytes.data() + r.off, size_t(numel) * 4);
        r.off += size_t(numel) * 4;
        if (entry.name.rfind("opt.", 0) == 0)
            out.opt.push_back(std::move(entry));
        else
            out.params.push_back(std::move(entry));
    }
    if (r.off != bytes.size())
        throw FormatError(path + ": trailing bytes after entry " + std::to_string(n_entries));
    return out;
}

void fill_tensor(Tensor& t, const std::vector<float>& data) {
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, double(data[size_t(i)]));
}

void check_config_match(const UHDformerConfig& file, const UHDformerConfig& model, const std::string& path) {
    auto fail = [&](const char* field, const std::string& fv, const std::string& mv) {
        throw ConfigError(path + ": checkpoint incompatible: config field " + field + " is " + fv +
                          ", model has " + mv);
    };
    auto num = [&](const char* field, int64_t fv, int64_t mv) {
        if (fv != mv) fail(field, std::to_string(fv), std::to_string(mv));
    };
    num("channels", file.channels, model.channels);
    num("blocks", file.blocks, model.blocks);
    num("heads", file.heads, model.heads);
    num("squeeze", file.squeeze, model.squeeze);
    num("shuffle", file.shuffle, model.shuffle);
    num("group", file.group, model.group);
    num("dualcmt_in_attn", file.dualcmt_in_attn, model.dualcmt_in_attn);
    num("dualcmt_in_ffn", file.dualcmt_in_ffn, model.dualcmt_in_ffn);
    num("max_branch", file.max_branch, model.max_branch);
    num("mean_branch", file.mean_branch, model.mean_branch);
    if (file.dtype != model.dtype) fail("dtype", dtype_name(file.dtype), dtype_name(model.dtype));
}

}  // namespace

std::string config_to_text(const UHDformerConfig& cfg) {
    std::ostringstream os;
    os << "channels=" << cfg.channels << "\n"
       << "blocks=" << cfg.blocks << "\n"
       << "heads=" << cfg.heads << "\n"
       << "squeeze=" << cfg.squeeze << "\n"
       << "shuffle=" << cfg.shuffle << "\n"
       << "group=" << cfg.group << "\n"
       << "dualcmt_in_attn=" << (cfg.dualcmt_in_attn ? 1 : 0) << "\n"
       << "dualcmt_in_ffn=" << (cfg.dualcmt_in_ffn ? 1 : 0) << "\n"
       << "max_branch=" << (cfg.max_branch ? 1 : 0) << "\n"
       << "mean_branch=" << (cfg.mean_branch ? 1 : 0) << "\n"
       << "dtype=" << dtype_name(cfg.dtype) << "\n";
    return os.str();
}

UHDformerConfig config_from_text(const std::string& text) {
    UHDformerConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config echo: malformed line \"" + line + "\"");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        auto as_int = [&]() -> int64_t {
            try {
                size_t used = 0;
                const int64_t v = std::stoll(val, &used);
                if (used != val.size()) throw std::invalid_argument(val);
                return v;
            } catch (const std::exception&) {
                throw FormatError("config echo: bad value \"" + val + "\" for " + key);
            }
        };
        if (key == "channels") cfg.channels = as_int();
        else if (key == "blocks") cfg.blocks = as_int();
        else if (key == "heads") cfg.heads = as_int();
        else if (key == "squeeze") cfg.squeeze = as_int();
        else if (key == "shuffle") cfg.shuffle = as_int();
        else if (key == "group") cfg.group = as_int();
        else if (key == "dualcmt_in_attn") cfg.dualcmt_in_attn = as_int() != 0;
        else if (key == "dualcmt_in_ffn") cfg.dualcmt_in_ffn = as_int() != 0;
        else if (key == "max_branch") cfg.max_branch = as_int() != 0;
        else if (key == "mean_branch") cfg.mean_branch = as_int() != 0;
        else if (key == "dtype") {
            if (val == "f32") cfg.dtype = DType::F32;
            else if (val == "f64") cfg.dtype = DType::F64;
            else throw FormatError("config echo: unknown dtype \"" + val + "\"");
        } else {
            throw FormatError("config echo: unknown key \"" + key + "\"");
        }
    }
    return cfg;
}

void save_checkpoint(const UHDformer& m, const std::string& path, const AdamWState* opt) {
    std::vector<uint8_t> out(kMagic, kMagic + 8);
    const std::string cfg_text = config_to_text(m.cfg);
    push_u32(out, uint32_t(cfg_text.size()));
    out.insert(out.end(), cfg_text.begin(), cfg_text.end());

    uint32_t count = uint32_t(m.registry.size());
    if (opt) {
        count += 1;  // opt.step
        for (const auto& [name, t] : m.registry.entries())
            count += uint32_t(opt->m.count(name)) + uint32_t(opt->v.count(name));
    }
    push_u32(out, count);
    for (const auto& [name, t] : m.registry.entries()) push_entry(out, name, t);
    if (opt) {
        Tensor step = Tensor::full(Shape(1, 1, 1, 1), double(opt->step), DType::F32);
        push_entry(out, "opt.step", step);
        for (const auto& [name, t] : m.registry.entries()) {
            if (auto it = opt->m.find(name); it != opt->m.end()) push_entry(out, "opt.m." + name, it->second);
            if (auto it = opt->v.find(name); it != opt->v.end()) push_entry(out, "opt.v." + name, it->second);
        }
    }
    atomic_write_bytes(path, out);
}

void load_checkpoint(UHDformer& m, const std::string& path, AdamWState* opt) {
    ParsedCheckpoint p = parse(path);

    // Validate everything against the registry before any mutation.
    std::unordered_map<std::string, const RawEntry*> by_name;
    for (const auto& e : p.params) by_name[e.name] = &e;
    for (const auto& [name, t] : m.registry.entries()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw ConfigError(path + ": checkpoint incompatible: missing parameter " + name);
        if (!(it->second->shape == t.shape()))
            throw ConfigError(path + ": checkpoint incompatible: shape of " + name + " is " +
                              it->second->shape.str() + ", model expects " + t.shape().str());
    }
    if (p.params.size() != m.registry.size())
        for (const auto& e : p.params)
            if (!m.registry.find(e.name))
                throw ConfigError(path + ": checkpoint incompatible: unexpected parameter " + e.name);
    check_config_match(p.cfg, m.cfg, path);

    AdamWState fresh;
    if (opt) {
        for (const auto& e : p.opt) {
            if (e.name == "opt.step") {
                fresh.step = int64_t(std::llround(double(e.data.at(0))));
                continue;
            }
            const bool is_m = e.name.rfind("opt.m.", 0) == 0;
            const bool is_v = e.name.rfind("opt.v.", 0) == 0;
            if (!is_m && !is_v)
                throw FormatError(path + ": unknown optimizer entry " + e.name);
            const std::string pname = e.name.substr(6);
            const Tensor* param = m.registry.find(pname);
            if (!param)
                throw ConfigError(path + ": checkpoint incompatible: optimizer entry for unknown parameter " +
                                  pname);
            if (!(e.shape == param->shape()))
                throw ConfigError(path + ": checkpoint incompatible: optimizer shape of " + pname + " is " +
                                  e.shape.str() + ", model expects " + param->shape().str());
            Tensor buf = Tensor::zeros(e.shape, m.cfg.dtype);
            fill_tensor(buf, e.data);
            (is_m ? fresh.m : fresh.v)[pname] = buf;
        }
    }

    // Commit.
    for (const auto& e : p.params) fill_tensor(*m.registry.find(e.name), e.data);
    if (opt) *opt = std::move(fresh);
}

UHDformerConfig checkpoint_config(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    Reader r{bytes, path};
    if (std::memcmp(r.str(8).data(), kMagic, 8) != 0)
        throw FormatError(path + ": not a checkpoint (magic mismatch at byte 0)");
    return config_from_text(r.str(r.u32()));
}

}  // namespace uhd
