#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dcn/audio.hpp"
#include "dcn/losses.hpp"
#include "dcn/model.hpp"
#include "dcn/signal.hpp"
#include "dcn/train.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

Array to_array(const std::vector<double>& v) { return Array(static_cast<py::ssize_t>(v.size()), v.data()); }

Array to_array(const dcn::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

dcn::Tensor to_tensor(const Array& a) {
  dcn::Shape shape(a.shape(), a.shape() + a.ndim());
  return dcn::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

dcn::StftConfig stft_config(std::size_t frame_len, std::size_t hop, const std::string& window) {
  dcn::StftConfig c;
  c.frame_len = frame_len;
  c.hop = hop;
  if (window == "hann") {
    c.window = dcn::WindowKind::hann;
  } else if (window == "rectangular") {
    c.window = dcn::WindowKind::rectangular;
  } else {
    throw std::invalid_argument("window must be 'hann' or 'rectangular'");
  }
  return c;
}

dcn::DcnConfig config_from_dict(const py::dict& d) {
  dcn::KeyValues kv;
  for (auto item : d) {
    const auto key = py::str(item.first).cast<std::string>();
    py::handle value = item.second;
    if (py::isinstance<py::bool_>(value)) {
      kv.set(key, value.cast<bool>() ? "true" : "false");
    } else {
      kv.set(key, py::str(value).cast<std::string>());
    }
  }
  dcn::DcnConfig c = dcn::DcnConfig::read(kv);
  c.validate();
  return c;
}

py::dict config_to_dict(const dcn::DcnConfig& c) {
  dcn::KeyValues kv;
  c.write(kv);
  py::dict d;
  for (const auto& [k, v] : kv.entries()) d[py::str(k)] = v;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dcn, m) {
  m.doc() = "Bindings for the DCN speech enhancement core";

  py::register_exception<dcn::TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def("frame_signal", [](const Array& y, std::size_t frame_len, std::size_t frame_shift) {
    return to_array(dcn::frame_signal(std::span<const double>(y.data(), y.size()), frame_len, frame_shift).frames);
  }, py::arg("y"), py::arg("frame_len"), py::arg("frame_shift"));

  m.def("overlap_add", [](const Array& frames, std::size_t original_len, std::size_t frame_shift) {
    if (frames.ndim() != 2) throw std::invalid_argument("frames must be 2-D");
    dcn::FrameMatrix fm{to_tensor(frames), original_len, static_cast<std::size_t>(frames.shape(1)), frame_shift};
    return to_array(dcn::overlap_add(fm));
  }, py::arg("frames"), py::arg("original_len"), py::arg("frame_shift"));

  m.def("stft", [](const Array& y, std::size_t frame_len, std::size_t hop, const std::string& window) {
    dcn::NoGradGuard guard;
    auto c = dcn::stft(dcn::Tensor({static_cast<std::size_t>(y.size())}, to_vector(y)), stft_config(frame_len, hop, window));
    return py::make_tuple(to_array(c.real), to_array(c.imag));
  }, py::arg("y"), py::arg("frame_len") = 512, py::arg("hop") = 256, py::arg("window") = "hann");

  m.def("loss", [](const std::string& kind, const Array& clean, const Array& estimate, const Array& noisy,
                   double alpha, std::size_t frame_len, std::size_t hop, const std::string& window) {
    dcn::NoGradGuard guard;
    dcn::LossConfig cfg;
    cfg.kind = dcn::parse_loss_kind(kind);
    cfg.alpha = alpha;
    cfg.stft = stft_config(frame_len, hop, window);
    cfg.validate();
    return dcn::compute_loss(cfg, to_tensor(clean), to_tensor(estimate), to_tensor(noisy)).item();
  }, py::arg("kind"), py::arg("clean"), py::arg("estimate"), py::arg("noisy"), py::arg("alpha") = 0.8,
     py::arg("frame_len") = 512, py::arg("hop") = 256, py::arg("window") = "hann");

  m.def("mix_at_snr", [](const Array& clean, const Array& noise, double snr) {
    auto mix = dcn::mix_at_snr(to_vector(clean), to_vector(noise), snr);
    return py::make_tuple(to_array(mix.noisy), to_array(mix.scaled_noise));
  }, py::arg("clean"), py::arg("noise"), py::arg("snr_db"));
  m.def("snr_db", [](const Array& s, const Array& e) { return dcn::snr_db(to_vector(s), to_vector(e)); });
  m.def("si_sdr", [](const Array& s, const Array& e) { return dcn::si_sdr(to_vector(s), to_vector(e)); });

  m.def("wav_read", [](const std::filesystem::path& p) {
    auto a = dcn::wav_read(p);
    return py::make_tuple(to_array(a.samples), a.sample_rate);
  });
  m.def("wav_write", [](const std::filesystem::path& p, const Array& samples, int rate) {
    dcn::wav_write(p, {to_vector(samples), rate});
  }, py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);

  m.def("synth_dataset", [](std::uint64_t seed, std::size_t count, double duration, std::vector<int> snrs) {
    py::list out;
    for (const auto& u : dcn::synth_dataset(seed, count, duration, 16000, snrs)) {
      py::dict d;
      d["clean"] = to_array(u.clean);
      d["noise"] = to_array(u.noise);
      d["noisy"] = to_array(u.noisy);
      d["snr_db"] = u.snr_db;
      d["noise_kind"] = dcn::noise_kind_name(u.noise_kind);
      d["seed"] = u.seed;
      out.append(d);
    }
    return out;
  }, py::arg("seed"), py::arg("count"), py::arg("duration_s") = 2.0,
     py::arg("snrs") = std::vector<int>{-5, -4, -3, -2, -1, 0});

  py::class_<dcn::DcnModel>(m, "Model")
      .def(py::init([](const py::dict& config, std::uint64_t seed) { return dcn::build_dcn(config_from_dict(config), seed); }),
           py::arg("config") = py::dict(), py::arg("seed") = 1)
      .def_static("load", [](const std::filesystem::path& p) { return dcn::load_checkpoint(p); })
      .def("save", [](const dcn::DcnModel& mdl, const std::filesystem::path& p) { dcn::save_checkpoint(mdl, p); })
      .def_property_readonly("config", [](const dcn::DcnModel& mdl) { return config_to_dict(mdl.config); })
      .def_property_readonly("parameter_count", &dcn::DcnModel::parameter_count)
      .def("enhance", [](const dcn::DcnModel& mdl, const Array& y) {
        return to_array(dcn::enhance_utterance(mdl, std::span<const double>(y.data(), y.size())));
      })
      .def("attention_maps", [](const dcn::DcnModel& mdl, const Array& y) {
        py::list out;
        for (const auto& w : dcn::attention_maps(mdl, std::span<const double>(y.data(), y.size()))) out.append(to_array(w));
        return out;
      });

  m.def("train", [](const std::string& config_path, const std::filesystem::path& checkpoint_dir) {
    dcn::TrainConfig cfg = dcn::TrainConfig::from_file(config_path);
    if (!checkpoint_dir.empty()) cfg.checkpoint_dir = checkpoint_dir;
    dcn::TrainResult r;
    {
      py::gil_scoped_release release;
      r = dcn::train(cfg);
    }
    py::list epochs;
    for (const auto& e : r.epochs) {
      py::dict d;
      d["epoch"] = e.epoch;
      d["step"] = e.step;
      d["lr"] = e.lr;
      d["train_loss"] = e.train_loss;
      d["valid_snr_gain"] = e.valid_snr_gain;
      d["valid_si_sdr_gain"] = e.valid_si_sdr_gain;
      epochs.append(d);
    }
    return py::make_tuple(std::move(r.model), epochs);
  }, py::arg("config_path"), py::arg("checkpoint_dir") = std::filesystem::path());
}
