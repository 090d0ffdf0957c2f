// Python surface over the C++ core. Arrays cross the boundary as C-contiguous
// rank-4 NCHW buffers and are always copied.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>

#include "rfr/image_io.hpp"
#include "rfr/metrics.hpp"
#include "rfr/partial_conv.hpp"
#include "rfr/rfr_net.hpp"
#include "rfr/synthetic.hpp"
#include "rfr/trainer.hpp"
#include "rfr/weights_io.hpp"

namespace py = pybind11;
using namespace rfr;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a, const char* what) {
  if (a.ndim() != 4) {
    throw DimensionError(std::string(what) + " must be a rank-4 NCHW array, got rank " +
                         std::to_string(a.ndim()));
  }
  const Shape s{std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)),
                std::size_t(a.shape(3))};
  return Tensor<T>(s, std::span<const T>(a.data(), s.numel()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  const Shape s = t.shape();
  Array<T> out({s.n, s.c, s.h, s.w});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

class PyNetwork {
 public:
  PyNetwork(std::size_t channel_scale, std::size_t iter_num, const std::string& merge_mode,
            bool attention, std::size_t downsample_depth, std::size_t resolution, std::uint64_t seed)
      : net_(build<float>(make_config(channel_scale, iter_num, merge_mode, attention,
                                      downsample_depth, resolution),
                          seed)) {}

  std::size_t param_count() const { return net_.param_count(); }
  std::size_t size_multiple() const { return net_.config().size_multiple(); }

  py::list describe() const {
    py::list rows;
    for (const auto& r : net_.describe()) {
      py::dict d;
      d["name"] = r.name;
      d["kind"] = r.kind;
      d["source"] = r.source;
      d["kernel"] = r.kernel;
      d["stride"] = r.stride;
      d["out_channels"] = r.out_channels;
      d["batch_norm"] = r.batch_norm;
      d["params"] = r.params;
      rows.append(d);
    }
    return rows;
  }

  py::tuple infer(const Array<float>& masked, const Array<float>& mask) {
    NetOutput<float> out;
    {
      const auto x = to_tensor(masked, "image");
      const auto m = to_tensor(mask, "mask");
      py::gil_scoped_release release;
      out = net_.infer(x, m);
    }
    py::list masks;
    for (const auto& m : out.reasoning.state.masks) masks.append(to_array(m));
    return py::make_tuple(to_array(out.prediction.value()), to_array(out.composite), masks);
  }

  std::vector<double> train(std::size_t dataset_size, const std::string& band, std::size_t steps_main,
                            std::size_t steps_finetune, std::size_t batch_size, double lr_main,
                            double lr_finetune, std::uint64_t seed) {
    const std::size_t side = net_.config().resolution;
    if (side == 0) throw ConfigError("training needs a network built with a fixed resolution");
    TrainConfig cfg;
    cfg.batch_size = batch_size;
    cfg.steps_main = steps_main;
    cfg.steps_finetune = steps_finetune;
    cfg.lr_main = lr_main;
    cfg.lr_finetune = lr_finetune;
    cfg.seed = seed;
    TrainHistory h;
    {
      py::gil_scoped_release release;
      const SyntheticDataset data(dataset_size, side, parse_mask_band(band), seed);
      h = rfr::train(net_, data, cfg);
    }
    std::vector<double> totals;
    for (const auto& s : h.steps) totals.push_back(s.losses.total);
    return totals;
  }

  void save(const std::string& path) const { save_weights(net_.params(), path); }
  void load(const std::string& path) { load_weights(net_.params(), path); }
  py::bytes to_bytes() const {
    const auto b = serialize_weights(net_.params());
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  }
  void from_bytes(const py::bytes& data) {
    const std::string s = data;
    deserialize_weights(net_.params(), std::vector<std::uint8_t>(s.begin(), s.end()));
  }

 private:
  static NetConfig make_config(std::size_t channel_scale, std::size_t iter_num,
                               const std::string& merge_mode, bool attention,
                               std::size_t downsample_depth, std::size_t resolution) {
    NetConfig cfg;
    cfg.channel_scale = channel_scale;
    cfg.downsample_depth = downsample_depth;
    cfg.resolution = resolution;
    cfg.reasoning.iter_num = iter_num;
    cfg.reasoning.merge_mode = parse_merge_mode(merge_mode);
    cfg.reasoning.attention = attention;
    return cfg;
  }

  NetworkGraph<float> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recurrent feature reasoning inpainting: network, partial convolution, metrics, I/O";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  auto& io_error = py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  // Later registrations are matched first, so FormatError keeps its own type.
  py::register_exception<FormatError>(m, "FormatError", io_error.ptr());
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<std::size_t, std::size_t, const std::string&, bool, std::size_t, std::size_t,
                    std::uint64_t>(),
           py::kw_only(), py::arg("channel_scale") = 1, py::arg("iter_num") = 6,
           py::arg("merge_mode") = "adaptive", py::arg("attention") = true,
           py::arg("downsample_depth") = 1, py::arg("resolution") = 0, py::arg("seed") = 0)
      .def_property_readonly("param_count", &PyNetwork::param_count)
      .def_property_readonly("size_multiple", &PyNetwork::size_multiple)
      .def("describe", &PyNetwork::describe)
      .def("infer", &PyNetwork::infer, py::arg("masked"), py::arg("mask"),
           "Returns (prediction, composite, per-recurrence masks) for holes-zeroed input.")
      .def("train", &PyNetwork::train, py::kw_only(), py::arg("dataset_size") = 8,
           py::arg("band") = "30-40", py::arg("steps_main") = 10, py::arg("steps_finetune") = 0,
           py::arg("batch_size") = 2, py::arg("lr_main") = 1e-4, py::arg("lr_finetune") = 1e-5,
           py::arg("seed") = 0, "Trains on synthetic data; returns the total loss per step.")
      .def("save", &PyNetwork::save, py::arg("path"))
      .def("load", &PyNetwork::load, py::arg("path"))
      .def("to_bytes", &PyNetwork::to_bytes)
      .def("from_bytes", &PyNetwork::from_bytes, py::arg("data"));

  m.def(
      "partial_conv",
      [](const Array<double>& x, const Array<double>& mask, const Array<double>& weight,
         std::optional<Array<double>> bias, std::size_t stride, std::size_t padding) {
        const Var<double> b = bias ? Var<double>(to_tensor(*bias, "bias")) : Var<double>();
        const auto out = rfr::partial_conv(Var<double>(to_tensor(x, "x")), to_tensor(mask, "mask"),
                                           Var<double>(to_tensor(weight, "weight")), b, stride, padding);
        return py::make_tuple(to_array(out.features.value()), to_array(out.mask));
      },
      py::arg("x"), py::arg("mask"), py::arg("weight"), py::arg("bias") = py::none(),
      py::arg("stride") = 1, py::arg("padding") = 0,
      "Mask-renormalized convolution; returns (features, updated mask).");
  m.def(
      "mask_update",
      [](const Array<double>& mask, std::size_t kernel, std::size_t stride, std::size_t padding) {
        return to_array(rfr::mask_update(to_tensor(mask, "mask"), kernel, stride, padding));
      },
      py::arg("mask"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 0);

  m.def("psnr", [](const Array<double>& a, const Array<double>& b) {
    return rfr::psnr(to_tensor(a, "pred"), to_tensor(b, "gt"));
  });
  m.def("ssim", [](const Array<double>& a, const Array<double>& b) {
    return rfr::ssim(to_tensor(a, "pred"), to_tensor(b, "gt"));
  });
  m.def("mean_l1", [](const Array<double>& a, const Array<double>& b) {
    return rfr::mean_l1(to_tensor(a, "pred"), to_tensor(b, "gt"));
  });

  m.def(
      "generate_mask",
      [](std::size_t size, const std::string& band, std::uint64_t seed) {
        return to_array(rfr::generate_mask(size, parse_mask_band(band), seed));
      },
      py::arg("size"), py::arg("band"), py::arg("seed") = 0,
      "Binary (1,1,size,size) mask, 1 = valid, with a hole fraction inside the band.");
  m.def(
      "generate_image",
      [](std::size_t size, std::uint64_t seed) { return to_array(rfr::generate_image(size, seed)); },
      py::arg("size"), py::arg("seed") = 0);
  m.def("hole_fraction", [](const Array<float>& mask) { return rfr::hole_fraction(to_tensor(mask, "mask")); });

  m.def("read_pnm", [](const std::string& path) { return to_array(rfr::read_pnm(path)); }, py::arg("path"));
  m.def(
      "write_pnm",
      [](const std::string& path, const Array<float>& image) { rfr::write_pnm(path, to_tensor(image, "image")); },
      py::arg("path"), py::arg("image"));
}
