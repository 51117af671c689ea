#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uhdformer/checkpoint.hpp"
#include "uhdformer/errors.hpp"
#include "uhdformer/image_io.hpp"
#include "uhdformer/metrics.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/parallel.hpp"
#include "uhdformer/selfcheck.hpp"
#include "uhdformer/train.hpp"

namespace py = pybind11;
using namespace uhd;

namespace {

Tensor tensor_from_array(const py::array& arr, DType dt) {
    auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 4) throw ShapeError("expected a 4-d array shaped (n, c, h, w)");
    const Shape s(a.shape(0), a.shape(1), a.shape(2), a.shape(3));
    Tensor t(s, dt);
    const double* p = a.data();
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, p[i]);
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    const auto& s = t.shape();
    py::array_t<double> a({static_cast<py::ssize_t>(s.n()), static_cast<py::ssize_t>(s.c()),
                           static_cast<py::ssize_t>(s.h()), static_cast<py::ssize_t>(s.w())});
    double* p = a.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = t.at(i);
    return a;
}

DType dtype_from_name(const std::string& name) {
    if (name == "f32") return DType::F32;
    if (name == "f64") return DType::F64;
    throw ConfigError("dtype must be \"f32\" or \"f64\", got \"" + name + "\"");
}

std::string dtype_to_name(DType dt) { return dt == DType::F64 ? "f64" : "f32"; }

struct PyModel {
    UHDformer m;

    explicit PyModel(const UHDformerConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        m = build_model(cfg, rng);
    }

    py::array forward(const py::array& img) {
        return array_from_tensor(model_forward(m, tensor_from_array(img, m.cfg.dtype)));
    }

    py::array restore(const py::array& img) {
        Tensor x = tensor_from_array(img, m.cfg.dtype);
        return array_from_tensor(clamp01(model_forward_padded(m, x)));
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> names;
        for (const auto& [name, t] : m.registry.entries()) names.push_back(name);
        return names;
    }

    py::array get_param(const std::string& name) const {
        const Tensor* t = m.registry.find(name);
        if (!t) throw ConfigError("no parameter named \"" + name + "\"");
        return array_from_tensor(*t);
    }

    void set_param(const std::string& name, const py::array& value) {
        Tensor* t = m.registry.find(name);
        if (!t) throw ConfigError("no parameter named \"" + name + "\"");
        Tensor v = tensor_from_array(value, t->dtype());
        if (!(v.shape() == t->shape()))
            throw ShapeError("parameter \"" + name + "\" has shape " + t->shape().str() +
                             ", value has " + v.shape().str());
        Tensor dst = *t;  // shares storage with the model
        for (int64_t i = 0; i < v.numel(); ++i) dst.set(i, v.at(i));
    }

    py::dict params() const {
        const ParamBreakdown pb = param_count(m);
        py::list sections;
        for (const auto& [label, n] : pb.sections) sections.append(py::make_tuple(label, n));
        py::dict d;
        d["total"] = pb.total;
        d["sections"] = sections;
        return d;
    }

    py::dict config() const {
        const auto& c = m.cfg;
        py::dict d;
        d["channels"] = c.channels;
        d["blocks"] = c.blocks;
        d["heads"] = c.heads;
        d["squeeze"] = c.squeeze;
        d["shuffle"] = c.shuffle;
        d["group"] = c.group;
        d["dualcmt_in_attn"] = c.dualcmt_in_attn;
        d["dualcmt_in_ffn"] = c.dualcmt_in_ffn;
        d["max_branch"] = c.max_branch;
        d["mean_branch"] = c.mean_branch;
        d["dtype"] = dtype_to_name(c.dtype);
        return d;
    }

    void save(const std::string& path) const { save_checkpoint(m, path); }
    void load(const std::string& path) { load_checkpoint(m, path); }
};

UHDformerConfig config_from_kwargs(int64_t channels, int64_t blocks, int64_t heads, int64_t squeeze,
                                   int64_t shuffle, int64_t group, bool dualcmt_in_attn,
                                   bool dualcmt_in_ffn, bool max_branch, bool mean_branch,
                                   const std::string& dtype) {
    UHDformerConfig cfg;
    cfg.channels = channels;
    cfg.blocks = blocks;
    cfg.heads = heads;
    cfg.squeeze = squeeze;
    cfg.shuffle = shuffle;
    cfg.group = group;
    cfg.dualcmt_in_attn = dualcmt_in_attn;
    cfg.dualcmt_in_ffn = dualcmt_in_ffn;
    cfg.max_branch = max_branch;
    cfg.mean_branch = mean_branch;
    cfg.dtype = dtype_from_name(dtype);
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "two-path image restoration: model, training loop, metrics, image IO";

    py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(mod, "ShapeError", PyExc_ValueError);
    py::register_exception<FormatError>(mod, "FormatError", PyExc_ValueError);
    py::register_exception<IoError>(mod, "IoError", PyExc_OSError);
    py::register_exception<NumericError>(mod, "NumericError", PyExc_ArithmeticError);

    py::class_<PyModel>(mod, "Model")
        .def(py::init([](int64_t channels, int64_t blocks, int64_t heads, int64_t squeeze,
                         int64_t shuffle, int64_t group, bool dualcmt_in_attn, bool dualcmt_in_ffn,
                         bool max_branch, bool mean_branch, const std::string& dtype, uint64_t seed) {
                 return PyModel(config_from_kwargs(channels, blocks, heads, squeeze, shuffle, group,
                                                   dualcmt_in_attn, dualcmt_in_ffn, max_branch,
                                                   mean_branch, dtype),
                                seed);
             }),
             py::arg("channels") = 16, py::arg("blocks") = 15, py::arg("heads") = 8,
             py::arg("squeeze") = 4, py::arg("shuffle") = 8, py::arg("group") = 3,
             py::arg("dualcmt_in_attn") = true, py::arg("dualcmt_in_ffn") = true,
             py::arg("max_branch") = true, py::arg("mean_branch") = true, py::arg("dtype") = "f32",
             py::arg("seed") = 0)
        .def_static("from_checkpoint",
                    [](const std::string& path) {
                        auto model = std::make_unique<PyModel>(checkpoint_config(path), 0);
                        model->load(path);
                        return model;
                    },
                    py::arg("path"), "Rebuild from the checkpoint's embedded config and weights.")
        .def("forward", &PyModel::forward, py::arg("img"),
             "Raw forward pass; extents must be multiples of the shuffle factor.")
        .def("restore", &PyModel::restore, py::arg("img"),
             "Reflect-pad to valid extents, run the model, crop, clamp to [0, 1].")
        .def("param_names", &PyModel::param_names)
        .def("get_param", &PyModel::get_param, py::arg("name"))
        .def("set_param", &PyModel::set_param, py::arg("name"), py::arg("value"))
        .def("params", &PyModel::params)
        .def("config", &PyModel::config)
        .def("save", &PyModel::save, py::arg("path"))
        .def("load", &PyModel::load, py::arg("path"));

    mod.def("make_clean_image",
            [](uint64_t seed, int64_t h, int64_t w) {
                return array_from_tensor(make_clean_image(seed, h, w, DType::F64));
            },
            py::arg("seed"), py::arg("h") = 64, py::arg("w") = 64,
            "Procedural clean test image shaped (1, 3, h, w), values inside (0, 1).");

    mod.def("synth_degrade",
            [](const py::array& clean, const std::string& kind, uint64_t seed) {
                DegradationSpec spec;
                spec.kind = degradation_from_name(kind);
                Rng rng(seed);
                DegradationDraw draw;
                Tensor out = synth_degrade(tensor_from_array(clean, DType::F64), spec, rng, &draw);
                return py::make_tuple(array_from_tensor(out), draw.str());
            },
            py::arg("clean"), py::arg("kind") = "lowlight", py::arg("seed") = 0,
            "Apply a synthetic degradation; returns (degraded, draw_record).");

    mod.def("psnr",
            [](const py::array& a, const py::array& b, double peak) {
                return psnr(tensor_from_array(a, DType::F64), tensor_from_array(b, DType::F64), peak);
            },
            py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);

    mod.def("ssim",
            [](const py::array& a, const py::array& b) {
                return ssim(tensor_from_array(a, DType::F64), tensor_from_array(b, DType::F64));
            },
            py::arg("a"), py::arg("b"));

    mod.def("read_image",
            [](const std::string& path) { return array_from_tensor(image_to_tensor(read_image(path))); },
            py::arg("path"), "Read a PNG or PPM file into a (1, 3, h, w) array in [0, 1].");

    mod.def("write_image",
            [](const std::string& path, const py::array& img) {
                write_image(path, tensor_to_image(tensor_from_array(img, DType::F32)));
            },
            py::arg("path"), py::arg("img"),
            "Quantize a (1, 3, h, w) array to 8-bit and write PNG or PPM (by extension).");

    mod.def("train_pairs",
            [](PyModel& model, const std::vector<std::pair<py::array, py::array>>& pairs, double lr0,
               double lr_min, int64_t total_steps, int64_t batch, int64_t patch,
               double freq_loss_weight, uint64_t seed, int64_t checkpoint_every,
               const std::string& checkpoint_path) {
                std::vector<ImagePair> ps;
                for (const auto& [clean, degraded] : pairs)
                    ps.push_back({tensor_from_array(clean, model.m.cfg.dtype),
                                  tensor_from_array(degraded, model.m.cfg.dtype)});
                TrainConfig tcfg;
                tcfg.lr0 = lr0;
                tcfg.lr_min = lr_min;
                tcfg.total_steps = total_steps;
                tcfg.batch = batch;
                tcfg.patch = patch;
                tcfg.freq_loss_weight = freq_loss_weight;
                tcfg.seed = seed;
                tcfg.checkpoint_every = checkpoint_every;
                tcfg.checkpoint_path = checkpoint_path;
                const TrainReport rep = train_on_pairs(model.m, ps, tcfg);
                py::dict d;
                d["losses"] = rep.losses;
                d["lrs"] = rep.lrs;
                d["baseline_psnr"] = rep.baseline_psnr;
                d["final_psnr"] = rep.final_psnr;
                d["wall_seconds"] = rep.wall_seconds;
                return d;
            },
            py::arg("model"), py::arg("pairs"), py::arg("lr0") = 5e-4, py::arg("lr_min") = 1e-7,
            py::arg("total_steps") = 500, py::arg("batch") = 2, py::arg("patch") = 64,
            py::arg("freq_loss_weight") = 0.1, py::arg("seed") = 0, py::arg("checkpoint_every") = 0,
            py::arg("checkpoint_path") = "",
            "Train on aligned (clean, degraded) full-image pairs; returns the step log.");

    mod.def("evaluate_pairs",
            [](PyModel& model, const std::vector<std::pair<py::array, py::array>>& pairs) {
                std::vector<ImagePair> ps;
                for (const auto& [clean, degraded] : pairs)
                    ps.push_back({tensor_from_array(clean, model.m.cfg.dtype),
                                  tensor_from_array(degraded, model.m.cfg.dtype)});
                const EvalResult ev = evaluate(model.m, ps);
                py::dict d;
                d["mean_psnr"] = ev.mean_psnr;
                d["mean_ssim"] = ev.mean_ssim;
                d["psnrs"] = ev.psnrs;
                d["ssims"] = ev.ssims;
                return d;
            },
            py::arg("model"), py::arg("pairs"));

    mod.def("selftest",
            [](const std::string& level) {
                if (level != "quick" && level != "full")
                    throw ConfigError("level must be \"quick\" or \"full\", got \"" + level + "\"");
                SelfTestOptions opts;
                opts.full = level == "full";
                const SelfTestReport rep = run_selftest(opts);
                py::list out;
                for (const auto& c : rep.checks) {
                    py::dict d;
                    d["name"] = c.name;
                    d["pass"] = c.pass;
                    d["detail"] = c.detail;
                    out.append(d);
                }
                return out;
            },
            py::arg("level") = "quick", "Run the invariant suite; each entry is {name, pass, detail}.");

    mod.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total"), py::arg("lr0"),
            py::arg("lr_min"));
    mod.def("set_num_threads", &set_num_threads, py::arg("n"));
}
