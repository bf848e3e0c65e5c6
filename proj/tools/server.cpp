#include <fstream>
#include <mutex>
#include <sstream>

#include <png.h>

#include "cli.hpp"
#include "httplib.h"
#include "json.hpp"
#include "palate/mesh.hpp"

namespace palate::cli {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

std::string triple(const Vector3d& v) {
  std::ostringstream s;
  s.precision(17);
  s << v.x() << ' ' << v.y() << ' ' << v.z();
  return s.str();
}

}  // namespace

std::vector<std::uint8_t> encode_png(const SliceImage& image) {
  if (image.width < 1 || image.height < 1) throw Error("png: empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: cannot create info");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int row = 0; row < image.height; ++row)
    png_write_row(png, image.pixels.data() + static_cast<std::size_t>(row) * image.width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

class AnnotationServer::Impl {
public:
  Impl(Volume v, std::filesystem::path p) : volume(std::move(v)), landmarks_path(std::move(p)) {
    volume.validate();
    routes();
  }

  void routes() {
    server.Get("/meta", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json j;
      j["dims"] = volume.dims;
      j["spacing"] = {volume.spacing.x(), volume.spacing.y(), volume.spacing.z()};
      j["origin"] = {volume.origin.x(), volume.origin.y(), volume.origin.z()};
      j["landmarks"] = std::vector<std::string>(kLandmarkNames.begin(), kLandmarkNames.end());
      res.set_content(j.dump(), "application/json");
    });

    server.Get(R"(/slice/([a-z]+)/(-?\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      SliceImage img;
      try {
        const SliceAxis axis = parse_slice_axis(req.matches[1]);
        img = slice_image(volume, axis, std::stoi(req.matches[2]));
      } catch (const std::exception& e) {
        res.status = 404;
        res.set_content(e.what(), "text/plain");
        return;
      }
      const auto png = encode_png(img);
      res.set_header("X-Pixel-Origin", triple(img.origin));
      res.set_header("X-Pixel-Step-U", triple(img.step_u));
      res.set_header("X-Pixel-Step-V", triple(img.step_v));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });

    server.Get("/landmarks", [this](const httplib::Request&, httplib::Response& res) {
      std::ifstream in(landmarks_path);
      if (!in) {
        res.status = 404;
        res.set_content("landmarks: not found", "text/plain");
        return;
      }
      std::stringstream text;
      text << in.rdbuf();
      res.set_content(text.str(), "text/plain");
    });

    server.Put("/landmarks", [this](const httplib::Request& req, httplib::Response& res) {
      LandmarkSet set;
      try {
        set = parse_landmark_set(req.body);
      } catch (const std::exception& e) {
        res.status = 422;
        res.set_content(e.what(), "text/plain");
        return;
      }
      std::lock_guard lock(write_mutex);
      // Write beside the target, then rename over it.
      auto tmp = landmarks_path;
      tmp += ".tmp";
      save_landmark_set(set, tmp);
      std::filesystem::rename(tmp, landmarks_path);
      res.set_content(format_landmark_set(set), "text/plain");
    });
  }

  Volume volume;
  std::filesystem::path landmarks_path;
  httplib::Server server;
  std::mutex write_mutex;
};

AnnotationServer::AnnotationServer(Volume volume, std::filesystem::path landmarks_path)
    : impl_(std::make_unique<Impl>(std::move(volume), std::move(landmarks_path))) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  int bound = -1;
  if (port == 0)
    bound = impl_->server.bind_to_any_port(host);
  else if (impl_->server.bind_to_port(host, port))
    bound = port;
  if (bound < 0) throw Error("serve: cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void AnnotationServer::run() { impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
}

void AnnotationServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace palate::cli
