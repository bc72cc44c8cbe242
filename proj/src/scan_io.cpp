#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "rcsm/detail/binary_io.hpp"
#include "rcsm/detail/text_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/simworld.hpp"

namespace rcsm {

namespace {

constexpr char kScanMagic[4] = {'R', 'S', 'C', 'N'};
constexpr std::uint8_t kCartesian = 0;
constexpr std::uint8_t kPolar = 1;

void write_payload(detail::BinaryWriter& out, const Image& img) {
  out.u32(static_cast<std::uint32_t>(img.rows()));
  out.u32(static_cast<std::uint32_t>(img.cols()));
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    for (Eigen::Index j = 0; j < img.cols(); ++j) out.f32(static_cast<float>(img(i, j)));
  }
}

Image read_payload(detail::BinaryReader& in) {
  const std::uint32_t d0 = in.u32();
  const std::uint32_t d1 = in.u32();
  if (d0 == 0 || d1 == 0 || std::uint64_t(d0) * d1 * 4 > in.remaining()) {
    throw CorruptFileError("scan file: implausible dimensions");
  }
  Image img(d0, d1);
  for (std::uint32_t i = 0; i < d0; ++i) {
    for (std::uint32_t j = 0; j < d1; ++j) {
      const float v = in.f32();
      if (!std::isfinite(v)) throw CorruptFileError("scan file: non-finite power value");
      img(i, j) = v;
    }
  }
  return img;
}

double finite_f64(detail::BinaryReader& in) {
  const double v = in.f64();
  if (!std::isfinite(v)) throw CorruptFileError("scan file: non-finite metadata");
  return v;
}

}  // namespace

void write_scan(const std::filesystem::path& path, const AnyScan& scan) {
  detail::BinaryWriter out;
  out.bytes(kScanMagic, 4);
  out.u32(kScanFormatVersion);
  if (const auto* c = std::get_if<CartesianScan>(&scan)) {
    out.u8(kCartesian);
    write_payload(out, c->power);
    out.f64(c->meters_per_pixel);
    out.f64(c->center.x());
    out.f64(c->center.y());
  } else {
    const auto& p = std::get<PolarScan>(scan);
    out.u8(kPolar);
    write_payload(out, p.power);
    out.f64(p.range_resolution);
    out.f64(p.azimuth_0);
  }
  out.write_file(path);
}

AnyScan read_scan(const std::filesystem::path& path) {
  detail::BinaryReader in = detail::BinaryReader::from_file(path);
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kScanMagic, 4) != 0) throw CorruptFileError("scan file: bad magic in " + path.string());
  const std::uint32_t version = in.u32();
  if (version != kScanFormatVersion) {
    throw VersionMismatchError("scan file: unsupported version " + std::to_string(version));
  }
  const std::uint8_t frame = in.u8();
  if (frame != kCartesian && frame != kPolar) throw CorruptFileError("scan file: unknown frame type");
  Image power = read_payload(in);
  AnyScan result;
  if (frame == kCartesian) {
    CartesianScan c;
    c.power = std::move(power);
    c.meters_per_pixel = finite_f64(in);
    c.center.x() = finite_f64(in);
    c.center.y() = finite_f64(in);
    if (!(c.meters_per_pixel > 0.0)) throw CorruptFileError("scan file: non-positive resolution");
    result = std::move(c);
  } else {
    PolarScan p;
    p.power = std::move(power);
    p.range_resolution = finite_f64(in);
    p.azimuth_0 = finite_f64(in);
    if (!(p.range_resolution > 0.0)) throw CorruptFileError("scan file: non-positive resolution");
    result = std::move(p);
  }
  if (!in.at_end()) throw CorruptFileError("scan file: trailing bytes in " + path.string());
  return result;
}

using nlohmann::json;

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  json j;
  j["format"] = "rcsm-dataset";
  j["version"] = 1;
  j["sensor"] = {{"n_azimuths", m.sensor.n_azimuths},
                 {"n_range_bins", m.sensor.n_range_bins},
                 {"range_resolution", m.sensor.range_resolution},
                 {"azimuth_0", m.sensor.azimuth_0},
                 {"reference_range", m.sensor.reference_range},
                 {"range_spread_bins", m.sensor.range_spread_bins}};
  j["layout"] = {{"width", m.layout.width}, {"height", m.layout.height}, {"meters_per_pixel", m.layout.meters_per_pixel}};
  j["sequences"] = json::array();
  for (const ManifestSequence& s : m.sequences) {
    json js = {{"name", s.name}, {"dynamic_fraction", s.dynamic_fraction}, {"frames", json::array()}};
    for (const ManifestFrame& f : s.frames) {
      json jf = {{"time", f.time}, {"pose", {f.pose.dx, f.pose.dy, f.pose.dtheta}}, {"scan", f.scan}};
      if (!f.label.empty()) jf["label"] = f.label;
      js["frames"].push_back(std::move(jf));
    }
    j["sequences"].push_back(std::move(js));
  }
  detail::write_text_file(path, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(f);
    if (j.at("format").get<std::string>() != "rcsm-dataset") throw CorruptFileError("manifest: unknown format");
    if (j.at("version").get<int>() != 1) throw VersionMismatchError("manifest: unsupported version");
    const json& s = j.at("sensor");
    m.sensor.n_azimuths = s.at("n_azimuths").get<int>();
    m.sensor.n_range_bins = s.at("n_range_bins").get<int>();
    m.sensor.range_resolution = s.at("range_resolution").get<double>();
    m.sensor.azimuth_0 = s.at("azimuth_0").get<double>();
    m.sensor.reference_range = s.at("reference_range").get<double>();
    m.sensor.range_spread_bins = s.at("range_spread_bins").get<double>();
    const json& l = j.at("layout");
    m.layout.width = l.at("width").get<int>();
    m.layout.height = l.at("height").get<int>();
    m.layout.meters_per_pixel = l.at("meters_per_pixel").get<double>();
    for (const json& js : j.at("sequences")) {
      ManifestSequence seq;
      seq.name = js.at("name").get<std::string>();
      seq.dynamic_fraction = js.at("dynamic_fraction").get<double>();
      for (const json& jf : js.at("frames")) {
        ManifestFrame fr;
        fr.time = jf.at("time").get<double>();
        const auto pose = jf.at("pose").get<std::vector<double>>();
        if (pose.size() != 3) throw CorruptFileError("manifest: pose must have three components");
        fr.pose = Pose(pose[0], pose[1], pose[2]);
        fr.scan = jf.at("scan").get<std::string>();
        if (jf.contains("label")) fr.label = jf.at("label").get<std::string>();
        seq.frames.push_back(std::move(fr));
      }
      m.sequences.push_back(std::move(seq));
    }
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("manifest: ") + e.what());
  }
  try {
    m.sensor.validate();
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("manifest: ") + e.what());
  }
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir, const DatasetManifest& m) {
  Dataset out;
  for (const ManifestSequence& seq : m.sequences) {
    std::vector<PolarScan> polar;
    std::vector<CartesianScan> cart;
    std::vector<Image> labels;
    bool labelled = !seq.frames.empty();
    for (const ManifestFrame& f : seq.frames) {
      AnyScan s = read_scan(dir / f.scan);
      const auto* p = std::get_if<PolarScan>(&s);
      if (p == nullptr) throw DataError("dataset: expected polar scans in " + f.scan);
      polar.push_back(*p);
      cart.push_back(polar_to_cartesian(*p, m.layout.width, m.layout.height, m.layout.meters_per_pixel));
      if (f.label.empty()) {
        labelled = false;
      } else {
        AnyScan l = read_scan(dir / f.label);
        const auto* c = std::get_if<CartesianScan>(&l);
        if (c == nullptr || c->width() != m.layout.width || c->height() != m.layout.height) {
          throw ShapeError("dataset: label raster does not match the layout in " + f.label);
        }
        labels.push_back(c->power);
      }
    }
    for (std::size_t i = 0; i + 1 < seq.frames.size(); ++i) {
      TrainingSample s;
      s.z1 = cart[i + 1];
      s.z2 = cart[i];
      s.p1 = polar[i + 1];
      s.p2 = polar[i];
      s.pose_gt = compose(inverse(seq.frames[i].pose), seq.frames[i + 1].pose);
      if (labelled) {
        s.label1 = labels[i + 1];
        s.label2 = labels[i];
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace rcsm
