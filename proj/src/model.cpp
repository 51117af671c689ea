#include "uhdformer/model.hpp"

#include <cmath>

#include "uhdformer/tape.hpp"

namespace uhd {

void UHDformerConfig::validate() const {
    auto positive = [](int64_t v, const char* name) {
        if (v < 1) throw ConfigError(std::string("config: ") + name + " must be positive, got " + std::to_string(v));
    };
    positive(channels, "channels");
    positive(blocks, "blocks");
    positive(heads, "heads");
    positive(squeeze, "squeeze");
    positive(shuffle, "shuffle");
    positive(group, "group");
    if (channels % heads != 0)
        throw ConfigError("config: heads " + std::to_string(heads) + " must divide channels " +
                          std::to_string(channels));
    if (channels % squeeze != 0)
        throw ConfigError("config: squeeze " + std::to_string(squeeze) + " must divide channels " +
                          std::to_string(channels));
    if (blocks % group != 0)
        throw ConfigError("config: group " + std::to_string(group) + " must divide blocks " +
                          std::to_string(blocks));
    if ((shuffle & (shuffle - 1)) != 0)
        throw ConfigError("config: shuffle " + std::to_string(shuffle) + " must be a power of two");
    if (!max_branch && !mean_branch && (dualcmt_in_attn || dualcmt_in_ffn))
        throw ConfigError("config: at least one pooling branch must stay enabled");
}

void ParamRegistry::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("registry: duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
}

Tensor* ParamRegistry::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
}

namespace {

void visit_model(UHDformer& m, const ParamVisitor& v) {
    conv_visit(m.head_conv, "head_conv", v);
    for (size_t i = 0; i < m.enc.size(); ++i) convnext_visit(m.enc[i], "enc." + std::to_string(i), v);
    acm_visit(m.acm, "acm", v);
    conv_visit(m.down_proj, "down_proj", v);
    for (size_t i = 0; i < m.body.size(); ++i) cmttb_visit(m.body[i], "body." + std::to_string(i), v);
    conv_visit(m.up_proj, "up_proj", v);
    conv_visit(m.fuse_conv, "fuse_conv", v);
    for (size_t i = 0; i < m.fuse_blocks.size(); ++i)
        convnext_visit(m.fuse_blocks[i], "fuse_blocks." + std::to_string(i), v);
    conv_visit(m.tail_conv, "tail_conv", v);
}

}  // namespace

UHDformer build_model(const UHDformerConfig& cfg, Rng& rng) {
    cfg.validate();
    const int64_t c = cfg.channels;
    const int64_t s2 = cfg.shuffle * cfg.shuffle;
    const DType dt = cfg.dtype;

    UHDformer m;
    m.cfg = cfg;
    m.head_conv = conv_init(3, c, 3, 1, 1, 1, rng, dt);
    for (int i = 0; i < 3; ++i) m.enc.push_back(convnext_init(c, rng, dt));
    m.acm = acm_init(c, rng, dt);
    m.down_proj = conv_init(c * s2, c, 1, 1, 0, 1, rng, dt);
    CMTTBOptions opt;
    opt.heads = cfg.heads;
    opt.r = cfg.squeeze;
    opt.s = cfg.shuffle;
    opt.dualcmt_in_attn = cfg.dualcmt_in_attn;
    opt.dualcmt_in_ffn = cfg.dualcmt_in_ffn;
    opt.max_branch = cfg.max_branch;
    opt.mean_branch = cfg.mean_branch;
    for (int64_t i = 0; i < cfg.blocks; ++i) m.body.push_back(cmttb_init(c, opt, rng, dt));
    m.up_proj = conv_init(c, c * s2, 1, 1, 0, 1, rng, dt);
    m.fuse_conv = conv_init(2 * c, c, 1, 1, 0, 1, rng, dt);
    for (int i = 0; i < 2; ++i) m.fuse_blocks.push_back(convnext_init(c, rng, dt));
    m.tail_conv = conv_init(c, 3, 3, 1, 1, 1, rng, dt);

    visit_model(m, [&m](const std::string& name, Tensor& t) { m.registry.add(name, t); });
    return m;
}

Tensor model_body(const UHDformer& m, const Tensor& y, const Tensor& x_acm) {
    Tensor cur = y;
    const int64_t groups = m.cfg.blocks / m.cfg.group;
    for (int64_t g = 0; g < groups; ++g) {
        Tensor skip = cur;
        for (int64_t b = 0; b < m.cfg.group; ++b)
            cur = cmttb_forward(m.body[static_cast<size_t>(g * m.cfg.group + b)], cur, x_acm);
        cur = add(cur, skip);
    }
    return cur;
}

Tensor model_forward(const UHDformer& m, const Tensor& img) {
    const auto& sh = img.shape();
    if (sh.c() != 3)
        throw ShapeError("model_forward: expected 3 input channels, got " + sh.str());
    if (sh.h() % m.cfg.shuffle != 0 || sh.w() % m.cfg.shuffle != 0)
        throw ShapeError("model_forward: spatial extents of " + sh.str() + " must be divisible by " +
                         std::to_string(m.cfg.shuffle));

    Tensor x0 = conv_apply(m.head_conv, img);
    Tensor x1 = convnext_forward(m.enc[0], x0);
    Tensor x2 = convnext_forward(m.enc[1], x1);
    Tensor x3 = convnext_forward(m.enc[2], x2);
    Tensor xa = acm_forward(m.acm, x1, x2, x3);

    Tensor y = conv_apply(m.down_proj, pixel_unshuffle(x0, m.cfg.shuffle));
    y = model_body(m, y, xa);
    Tensor up = pixel_shuffle(conv_apply(m.up_proj, y), m.cfg.shuffle);

    const Tensor cat[2] = {x3, up};
    Tensor f = conv_apply(m.fuse_conv, concat_channels(cat));
    for (const auto& blk : m.fuse_blocks) f = convnext_forward(blk, f);
    return add(img, conv_apply(m.tail_conv, f));
}

namespace {

int64_t reflect_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace

Tensor model_forward_padded(const UHDformer& m, const Tensor& img) {
    if (detail::recording_tape({&img}))
        throw ContractError("model_forward_padded: inference only, input must not be taped");
    const int64_t s = m.cfg.shuffle;
    const auto& sh = img.shape();
    const int64_t ph = (s - sh.h() % s) % s;
    const int64_t pw = (s - sh.w() % s) % s;
    if (ph == 0 && pw == 0) return model_forward(m, img);

    Tensor padded(Shape(sh.n(), sh.c(), sh.h() + ph, sh.w() + pw), img.dtype());
    for (int64_t n = 0; n < sh.n(); ++n)
        for (int64_t c = 0; c < sh.c(); ++c)
            for (int64_t h = 0; h < sh.h() + ph; ++h)
                for (int64_t w = 0; w < sh.w() + pw; ++w)
                    padded.set(n, c, h, w, img.at(n, c, reflect_index(h, sh.h()), reflect_index(w, sh.w())));

    Tensor full = model_forward(m, padded);
    Tensor out(sh, img.dtype());
    for (int64_t n = 0; n < sh.n(); ++n)
        for (int64_t c = 0; c < sh.c(); ++c)
            for (int64_t h = 0; h < sh.h(); ++h)
                for (int64_t w = 0; w < sh.w(); ++w) out.set(n, c, h, w, full.at(n, c, h, w));
    return out;
}

ParamBreakdown param_count(const UHDformer& m) {
    ParamBreakdown out;
    const std::pair<const char*, std::vector<std::string>> sections[] = {
        {"head", {"head_conv."}},
        {"enc", {"enc."}},
        {"acm", {"acm."}},
        {"bridge", {"down_proj.", "up_proj."}},
        {"body", {"body."}},
        {"fusion", {"fuse_conv.", "fuse_blocks."}},
        {"tail", {"tail_conv."}},
    };
    for (const auto& [label, prefixes] : sections) {
        int64_t n = 0;
        for (const auto& [name, t] : m.registry.entries())
            for (const auto& p : prefixes)
                if (name.rfind(p, 0) == 0) {
                    n += t.numel();
                    break;
                }
        out.sections.emplace_back(label, n);
        out.total += n;
    }
    return out;
}

std::string ParamBreakdown::str() const {
    std::string s = "total=" + std::to_string(total);
    for (const auto& [label, n] : sections) s += " " + std::string(label) + "=" + std::to_string(n);
    return s;
}

}  // namespace uhd
