#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "harnet/baselines.hpp"
#include "harnet/cli.hpp"
#include "harnet/losses.hpp"
#include "harnet/metrics.hpp"
#include "harnet/model.hpp"
#include "harnet/preprocess.hpp"
#include "harnet/synthdata.hpp"

namespace py = pybind11;
using namespace harnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Angiogram& img) {
  Array out({img.height(), img.width()});
  std::copy(img.pixels().begin(), img.pixels().end(), out.mutable_data());
  return out;
}

std::vector<double> flat(const Array& a, int& h, int& w) {
  if (a.ndim() != 2) throw usage_error("expected a 2-D array");
  h = static_cast<int>(a.shape(0));
  w = static_cast<int>(a.shape(1));
  return {a.data(), a.data() + a.size()};
}

Angiogram make_angiogram(const Array& a, const std::string& scale, double fov_mm, const std::string& id) {
  int h = 0, w = 0;
  auto px = flat(a, h, w);
  return Angiogram(h, w, std::move(px), parse_intensity_scale(scale), fov_mm, id);
}

nn::Tensor64 as_tensor(const Array& a) {
  int h = 0, w = 0;
  auto px = flat(a, h, w);
  return nn::Tensor64::from_data({1, 1, h, w}, std::move(px));
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["id"] = r.id;
  d["noise_intensity"] = r.noise_intensity;
  d["contrast_rms"] = r.contrast_rms;
  d["connectivity"] = r.connectivity;
  d["region_row"] = r.region_row;
  d["region_col"] = r.region_col;
  d["region_diameter_mm"] = r.region_diameter_mm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "HARNet angiogram reconstruction: images, metrics, baselines, model and CLI.";

  static py::exception<Error> error(m, "HarnetError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<Angiogram>(m, "Angiogram")
      .def(py::init(&make_angiogram), py::arg("pixels"), py::arg("scale") = "Raw255", py::arg("fov_mm") = 3.0,
           py::arg("id") = "")
      .def_property_readonly("height", &Angiogram::height)
      .def_property_readonly("width", &Angiogram::width)
      .def_property_readonly("scale", [](const Angiogram& a) { return std::string(to_string(a.scale())); })
      .def_property_readonly("fov_mm", &Angiogram::fov_mm)
      .def_property_readonly("id", &Angiogram::id)
      .def("to_numpy", &to_array)
      .def("__repr__", [](const Angiogram& a) {
        std::ostringstream s;
        s << "Angiogram(" << a.height() << "x" << a.width() << ", " << to_string(a.scale()) << ", id='" << a.id()
          << "')";
        return s.str();
      });

  m.def("load_image", [](const std::filesystem::path& p) { return load_image(p); });
  m.def("save_image", [](const Angiogram& a, const std::filesystem::path& p) { save_image(a, p); });
  m.def("normalize_unit", [](const Angiogram& a) { return normalize_unit(a); });
  m.def("to_unit", &to_unit);
  m.def("to_raw255", &to_raw255);

  m.def("noise_intensity",
        [](const Angiogram& a, double diameter_mm) {
          const Angiogram raw = to_raw255(a);
          return noise_intensity(raw, circular_region(raw, image_center(raw), diameter_mm));
        },
        py::arg("img"), py::arg("diameter_mm") = 0.3, "Mean squared intensity over the central disc.");
  m.def("rms_contrast", [](const Angiogram& a) { return rms_contrast(to_raw255(a)); });
  m.def("otsu_threshold", [](const Angiogram& a) { return otsu_threshold(to_raw255(a)); });
  m.def("connectivity", [](const Angiogram& a) { return connectivity(to_raw255(a)); });
  m.def("evaluate_image", [](const Angiogram& a) { return report_dict(evaluate_image(a)); });

  m.def("gabor_enhance", [](const Angiogram& a) { return gabor_enhance(a); });
  m.def("frangi_vesselness", [](const Angiogram& a) { return frangi_vesselness(a); });
  m.def("bilateral", &bilateral, py::arg("img"), py::arg("spatial_sigma") = 2.0, py::arg("range_sigma") = 25.0);
  m.def("median_filter", &median_filter, py::arg("img"), py::arg("window") = 3);

  m.def("generate_pair",
        [](std::uint64_t seed, int size_px, double fov_mm) {
          VesselTreeSpec spec;
          spec.seed = seed;
          auto pair = generate_pair(spec, fov_mm, size_px);
          return py::make_tuple(pair.clean, pair.degraded);
        },
        py::arg("seed") = 1, py::arg("size_px") = 128, py::arg("fov_mm") = 3.0,
        "Synthetic (clean, degraded) pair on one grid.");

  m.def("register_images",
        [](const Angiogram& moving, const Angiogram& fixed) {
          const auto r = register_images(moving, fixed);
          py::dict d;
          d["tx"] = r.transform.tx;
          d["ty"] = r.transform.ty;
          d["theta"] = r.transform.theta;
          d["scale"] = r.transform.scale;
          d["objective"] = r.objective;
          d["converged"] = r.converged;
          return d;
        },
        py::arg("moving"), py::arg("fixed"));
  m.def("max_inscribed_rect",
        [](py::array_t<bool, py::array::c_style | py::array::forcecast> mask) {
          if (mask.ndim() != 2) throw usage_error("expected a 2-D mask");
          const int h = static_cast<int>(mask.shape(0)), w = static_cast<int>(mask.shape(1));
          const std::vector<bool> bits(mask.data(), mask.data() + mask.size());
          const Rect r = max_inscribed_rect(PixelRegion::from_mask(h, w, bits));
          return py::make_tuple(r.top, r.left, r.height, r.width);
        },
        "(top, left, height, width) of the largest rectangle inside the mask.");

  m.def("ssim", [](const Array& x, const Array& y) { return ssim(as_tensor(x), as_tensor(y)).item(); });
  m.def("combined_loss", [](const Array& x, const Array& y) {
    const auto b = combined_loss(as_tensor(x), as_tensor(y)).breakdown;
    py::dict d;
    d["mse"] = b.mse;
    d["ssim"] = b.ssim;
    d["total"] = b.total;
    return d;
  });

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init<int, int, int, int, int>(), py::arg("low_level_channels") = 128, py::arg("block_count") = 4,
           py::arg("layers_per_block") = 20, py::arg("block_channels") = 64, py::arg("kernel") = 3)
      .def_static("paper", &ModelSpec::paper)
      .def_static("desk", &ModelSpec::desk)
      .def_readwrite("low_level_channels", &ModelSpec::low_level_channels)
      .def_readwrite("block_count", &ModelSpec::block_count)
      .def_readwrite("layers_per_block", &ModelSpec::layers_per_block)
      .def_readwrite("block_channels", &ModelSpec::block_channels)
      .def_readwrite("kernel", &ModelSpec::kernel)
      .def("validate", &ModelSpec::validate)
      .def("block_input_widths", &ModelSpec::block_input_widths)
      .def("residual_input_width", &ModelSpec::residual_input_width)
      .def(py::self == py::self);

  py::class_<Model>(m, "Model")
      .def_static("build", &Model::build, py::arg("spec"), py::arg("seed") = 0)
      .def_static("zeros", &Model::zeros)
      .def_property_readonly("spec", &Model::spec)
      .def("parameter_count", &Model::parameter_count)
      .def("zero_residual_layer", &Model::zero_residual_layer)
      .def("reconstruct", [](const Model& model, const Angiogram& img) { return reconstruct(model, img); })
      .def("save", [](const Model& model, const std::filesystem::path& p) { save_checkpoint(model, p); });
  m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); });

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          const int code = run_cli(args, out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run the command-line interface; returns (exit code, stdout, stderr).");
}
