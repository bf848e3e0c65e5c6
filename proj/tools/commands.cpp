#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "json.hpp"
#include "palate/evalreport.hpp"
#include "palate/phantom.hpp"

namespace palate::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw Error("config: unknown key " + where + key);
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json icp_json(const IcpParams& p) {
  return {{"max_iter", p.max_iter}, {"tol", p.tol}, {"trim_fraction", p.trim_fraction}};
}

json to_json(const PipelineConfig& c) {
  json j;
  j["threshold"] = c.threshold;
  j["crop"] = c.crop ? json{{"min", c.crop->min_voxel}, {"max", c.crop->max_voxel}} : json(nullptr);
  j["largest_component"] = c.largest_component;
  j["template"] = c.template_path;
  j["output_dir"] = c.output_dir;
  j["variance_keep"] = c.variance_keep;
  j["fit"] = {{"max_iter", c.fit.max_iter},
              {"grad_tol", c.fit.grad_tol},
              {"correspondence_cutoff", c.fit.correspondence_cutoff},
              {"refresh_correspondences_every", c.fit.refresh_correspondences_every},
              {"max_refreshes", c.fit.max_refreshes},
              {"refine_pose", c.fit.refine_pose}};
  j["templatefit"] = {{"smoothness_weight", c.templatefit.smoothness_weight},
                      {"max_outer_iter", c.templatefit.max_outer_iter},
                      {"correspondence_cutoff", c.templatefit.correspondence_cutoff},
                      {"convergence_tol", c.templatefit.convergence_tol},
                      {"stiffness_ratio", c.templatefit.stiffness_ratio}};
  j["gpa"] = {{"max_iter", c.gpa.max_iter}, {"tol", c.gpa.tol}};
  j["icp"] = icp_json(c.icp);
  return j;
}

fs::path under(const PipelineConfig& config, const fs::path& p) {
  return config.output_dir.empty() || p.is_absolute() ? p : fs::path(config.output_dir) / p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io: cannot write " + path.string());
  out << text;
}

std::vector<fs::path> expand_meshes(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.path().extension() == ".obj") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

std::string mesh_id(const fs::path& p) { return p.stem().string(); }

AnnotationServer* active_server = nullptr;

void on_signal(int) {
  if (active_server) active_server->stop();
}

}  // namespace

PipelineConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config: parse error: ") + e.what());
  }
  PipelineConfig c;
  try {
    reject_unknown(j, {"threshold", "crop", "largest_component", "template", "output_dir", "variance_keep", "fit",
                       "templatefit", "gpa", "icp"},
                   "");
    take(j, "threshold", c.threshold);
    if (j.contains("crop") && !j["crop"].is_null()) {
      const json& b = j["crop"];
      reject_unknown(b, {"min", "max"}, "crop.");
      CropBox box;
      box.min_voxel = b.at("min").get<std::array<int, 3>>();
      box.max_voxel = b.at("max").get<std::array<int, 3>>();
      c.crop = box;
    }
    take(j, "largest_component", c.largest_component);
    take(j, "template", c.template_path);
    take(j, "output_dir", c.output_dir);
    take(j, "variance_keep", c.variance_keep);
    if (j.contains("fit")) {
      const json& f = j["fit"];
      reject_unknown(f, {"max_iter", "grad_tol", "correspondence_cutoff", "refresh_correspondences_every",
                         "max_refreshes", "refine_pose"},
                     "fit.");
      take(f, "max_iter", c.fit.max_iter);
      take(f, "grad_tol", c.fit.grad_tol);
      take(f, "correspondence_cutoff", c.fit.correspondence_cutoff);
      take(f, "refresh_correspondences_every", c.fit.refresh_correspondences_every);
      take(f, "max_refreshes", c.fit.max_refreshes);
      take(f, "refine_pose", c.fit.refine_pose);
    }
    if (j.contains("templatefit")) {
      const json& t = j["templatefit"];
      reject_unknown(t, {"smoothness_weight", "max_outer_iter", "correspondence_cutoff", "convergence_tol",
                         "stiffness_ratio"},
                     "templatefit.");
      take(t, "smoothness_weight", c.templatefit.smoothness_weight);
      take(t, "max_outer_iter", c.templatefit.max_outer_iter);
      take(t, "correspondence_cutoff", c.templatefit.correspondence_cutoff);
      take(t, "convergence_tol", c.templatefit.convergence_tol);
      take(t, "stiffness_ratio", c.templatefit.stiffness_ratio);
    }
    if (j.contains("gpa")) {
      reject_unknown(j["gpa"], {"max_iter", "tol"}, "gpa.");
      take(j["gpa"], "max_iter", c.gpa.max_iter);
      take(j["gpa"], "tol", c.gpa.tol);
    }
    if (j.contains("icp")) {
      reject_unknown(j["icp"], {"max_iter", "tol", "trim_fraction"}, "icp.");
      take(j["icp"], "max_iter", c.icp.max_iter);
      take(j["icp"], "tol", c.icp.tol);
      take(j["icp"], "trim_fraction", c.icp.trim_fraction);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.fit.icp = c.icp;
  c.templatefit.icp = c.icp;
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: not found: " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_config(const PipelineConfig& config) { return to_json(config).dump(2); }

PointCloud cloud_from_volume(const Volume& volume, const PipelineConfig& config) {
  const Volume v = config.crop ? crop(volume, *config.crop) : volume;
  TissueMask mask = segment_tissue(v, config.threshold);
  if (config.largest_component) mask = largest_component(mask);
  if (mask.count() == 0) throw Error("segmentation empty");
  return extract_surface_points(mask, v);
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Palate shape-space pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON pipeline configuration")->check(CLI::ExistingFile);

  PipelineConfig config;
  auto resolve = [&] {
    if (!config_path.empty()) config = load_config(config_path);
    std::cout << "resolved config:\n" << format_config(config) << '\n';
  };

  // extract
  std::string ex_volume, ex_landmarks, ex_template, ex_out;
  auto* extract = app.add_subcommand("extract", "Volume + landmarks -> fitted template mesh");
  extract->add_option("--volume", ex_volume, "RVH header")->required();
  extract->add_option("--landmarks", ex_landmarks, "World landmark file")->required();
  extract->add_option("--template", ex_template, "Template OBJ (overrides config)");
  extract->add_option("-o,--output", ex_out, "Output OBJ")->required();
  extract->callback([&] {
    resolve();
    if (!ex_template.empty()) config.template_path = ex_template;
    if (config.template_path.empty()) throw Error("extract: no template given");
    const LandmarkSet landmarks = load_landmark_set(ex_landmarks);
    const Mesh templ = load_mesh_with_landmarks(config.template_path);
    const PointCloud cloud = cloud_from_volume(load_volume(ex_volume), config);
    const TemplateFitResult r = fit_template_detailed(templ, cloud, landmarks, config.templatefit);
    const fs::path out = under(config, ex_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_mesh_with_landmarks(r.mesh, out);
    std::ostringstream log;
    log << "cloud_points " << cloud.size() << '\n'
        << "iterations " << r.iterations << '\n'
        << "final_energy " << (r.energy_after.empty() ? 0.0 : r.energy_after.back()) << '\n'
        << "pose\n"
        << format_transform(r.pose);
    auto log_path = out;
    write_text(log_path.replace_extension(".log"), log.str());
    std::cout << "extract: " << cloud.size() << " surface points, " << r.iterations << " iterations -> "
              << out.string() << '\n';
  });

  // train
  std::vector<std::string> tr_inputs;
  std::string tr_out;
  auto* train_cmd = app.add_subcommand("train", "Aligned PCA shape space from training meshes");
  train_cmd->add_option("meshes", tr_inputs, "OBJ files or directories of OBJ files")->required();
  train_cmd->add_option("-o,--output", tr_out, "Model file")->required();
  train_cmd->callback([&] {
    resolve();
    const auto paths = expand_meshes(tr_inputs);
    std::vector<Mesh> meshes;
    for (const auto& p : paths) meshes.push_back(load_mesh_with_landmarks(p));
    if (meshes.size() < 2) throw Error("train: need at least 2 meshes");
    const GpaResult g = gpa(meshes, config.gpa);
    std::vector<Mesh> aligned;
    for (std::size_t i = 0; i < meshes.size(); ++i) aligned.push_back(with_vertices(meshes[i], g.aligned[i]));
    const ShapeSpaceModel model = train(aligned, config.variance_keep);
    const fs::path out = under(config, tr_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_model(model, out);
    std::cout << "train: " << meshes.size() << " meshes, " << model.modes() << " modes, gpa "
              << g.iterations << " iterations -> " << out.string() << '\n';
  });

  // generate
  std::string gen_model, gen_out;
  std::vector<double> gen_coeff, gen_sd;
  auto* generate_cmd = app.add_subcommand("generate", "Shape from coefficients (mean by default)");
  generate_cmd->add_option("--model", gen_model)->required();
  auto* coeff_opt = generate_cmd->add_option("--coeff", gen_coeff, "Leading coefficients, model units");
  generate_cmd->add_option("--sd", gen_sd, "Leading coefficients in standard deviations")->excludes(coeff_opt);
  generate_cmd->add_option("-o,--output", gen_out)->required();
  generate_cmd->callback([&] {
    resolve();
    const ShapeSpaceModel model = load_model(gen_model);
    CoefficientVector c = CoefficientVector::Zero(model.modes());
    const auto& given = gen_sd.empty() ? gen_coeff : gen_sd;
    if (static_cast<Index>(given.size()) > model.modes())
      throw Error("generate: " + std::to_string(given.size()) + " coefficients for " +
                  std::to_string(model.modes()) + " modes");
    for (std::size_t i = 0; i < given.size(); ++i)
      c[static_cast<Index>(i)] = gen_sd.empty() ? given[i] : given[i] * std::sqrt(model.variances[static_cast<Index>(i)]);
    const fs::path out = under(config, gen_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_mesh_with_landmarks(generate(model, c), out);
    std::cout << "generate: log density " << log_density(model, c) << " -> " << out.string() << '\n';
  });

  // fit
  std::string fit_model, fit_landmarks, fit_cloud, fit_volume, fit_out, fit_result;
  bool landmarks_only = false;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the shape space to a cloud or to landmarks");
  fit_cmd->add_option("--model", fit_model)->required();
  fit_cmd->add_option("--landmarks", fit_landmarks, "World landmark file")->required();
  auto* cloud_opt = fit_cmd->add_option("--cloud", fit_cloud, "Point cloud text file");
  fit_cmd->add_option("--volume", fit_volume, "RVH volume, segmented with the configured threshold")
      ->excludes(cloud_opt);
  fit_cmd->add_flag("--landmarks-only", landmarks_only, "Ignore surface data and fit the seven landmarks");
  fit_cmd->add_option("-o,--output", fit_out, "Fitted OBJ")->required();
  fit_cmd->add_option("--result", fit_result, "Fit result text (default: <output>.fit)");
  fit_cmd->callback([&] {
    resolve();
    const ShapeSpaceModel model = load_model(fit_model);
    const LandmarkSet landmarks = load_landmark_set(fit_landmarks);
    FitResult fit;
    if (landmarks_only) {
      fit = fit_to_landmarks(model, landmarks, config.fit);
    } else {
      PointCloud cloud;
      if (!fit_cloud.empty())
        cloud = load_point_cloud(fit_cloud);
      else if (!fit_volume.empty())
        cloud = cloud_from_volume(load_volume(fit_volume), config);
      else
        throw Error("fit: need --cloud, --volume or --landmarks-only");
      fit = fit_to_cloud(model, cloud, landmarks, config.fit);
    }
    const fs::path out = under(config, fit_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_mesh_with_landmarks(fitted_mesh(model, fit), out);
    fs::path result = fit_result.empty() ? fs::path(out).replace_extension(".fit") : under(config, fit_result);
    write_text(result, format_fit_result(fit));
    std::cout << "fit: energy " << fit.final_energy << ", " << fit.iterations << " iterations, log density "
              << fit.log_density << " -> " << out.string() << '\n';
  });

  // evaluate
  std::string ev_mesh, ev_reference, ev_csv, ev_svg, ev_ply;
  bool ev_align = false;
  double ev_dmax = 2.0;
  int ev_bins = 256;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Per-vertex distance to a reference surface");
  evaluate_cmd->add_option("--mesh", ev_mesh)->required();
  evaluate_cmd->add_option("--reference", ev_reference)->required();
  evaluate_cmd->add_flag("--align", ev_align, "Rigidly align the mesh onto the reference first");
  evaluate_cmd->add_option("--csv", ev_csv, "Cumulative error CSV");
  evaluate_cmd->add_option("--svg", ev_svg, "Cumulative error plot");
  evaluate_cmd->add_option("--ply", ev_ply, "Heat-map coloured mesh");
  evaluate_cmd->add_option("--dmax", ev_dmax, "Heat-map saturation distance (mm)");
  evaluate_cmd->add_option("--bins", ev_bins, "CDF samples");
  evaluate_cmd->callback([&] {
    resolve();
    Mesh mesh = load_mesh_with_landmarks(ev_mesh);
    const Mesh reference = load_mesh_with_landmarks(ev_reference);
    if (ev_align) mesh.vertices = rigid_align_for_evaluation(mesh, reference, config.icp).apply(mesh.vertices);
    const ErrorReport report = per_vertex_errors(mesh, reference, mesh_id(ev_mesh), mesh_id(ev_reference));
    const auto cdf = cumulative_error(report, ev_bins);
    if (!ev_csv.empty()) write_text(under(config, ev_csv), cdf_csv(cdf));
    if (!ev_svg.empty()) write_text(under(config, ev_svg), cdf_svg(cdf, report.mesh_id + " vs " + report.reference_id));
    if (!ev_ply.empty()) {
      const ColoredMesh heat = heatmap_mesh(mesh, report, ev_dmax);
      const fs::path ply = under(config, ev_ply);
      if (ply.has_parent_path()) fs::create_directories(ply.parent_path());
      save_colored_ply(heat.mesh, heat.colors, ply);
    }
    std::cout << "evaluate: mean " << report.mean() << " mm, max " << report.max() << " mm, below 0.5 mm "
              << fraction_below(report, 0.5) << ", below 1 mm " << fraction_below(report, 1.0) << '\n';
  });

  // synth
  std::string sy_out, sy_name = "phantom";
  int sy_count = 1;
  std::uint64_t sy_seed = 0;
  double sy_spread = 0.0;
  std::vector<double> sy_spacing{1.1875, 1.1875, 1.2};
  PhantomParams base;
  bool sy_no_volume = false;
  auto* synth_cmd = app.add_subcommand("synth", "Synthetic phantom meshes, landmarks and volumes");
  synth_cmd->add_option("--out", sy_out, "Output directory")->required();
  synth_cmd->add_option("--name", sy_name, "File name prefix");
  synth_cmd->add_option("--count", sy_count, "Number of phantoms")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", sy_seed, "Population seed");
  synth_cmd->add_option("--spread", sy_spread, "Population parameter spread (0: all equal to the base)");
  synth_cmd->add_option("--spacing", sy_spacing, "Voxel spacing (mm)")->expected(3);
  synth_cmd->add_option("--dome-height", base.dome_height);
  synth_cmd->add_option("--asymmetry", base.asymmetry);
  synth_cmd->add_option("--concavity", base.concavity);
  synth_cmd->add_flag("--no-volume", sy_no_volume, "Skip rasterization");
  synth_cmd->callback([&] {
    resolve();
    base.seed = sy_seed;
    base.validate();
    const fs::path dir = under(config, sy_out);
    fs::create_directories(dir);
    const std::vector<Mesh> meshes = sy_spread > 0.0 ? synth_population(base, sy_count, sy_spread, sy_seed)
                                                     : std::vector<Mesh>(sy_count, synth_palate(base).first);
    const Vector3d spacing(sy_spacing[0], sy_spacing[1], sy_spacing[2]);
    for (std::size_t i = 0; i < meshes.size(); ++i) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%02zu", sy_name.c_str(), i);
      save_mesh_with_landmarks(meshes[i], dir / (std::string(stem) + ".obj"));
      save_landmark_set(landmark_positions(meshes[i]), dir / (std::string(stem) + "_landmarks.lmk"));
      if (!sy_no_volume) save_volume(rasterize(meshes[i], geometry_around(meshes[i], spacing)), dir / (std::string(stem) + ".rvh"));
    }
    std::cout << "synth: " << meshes.size() << " phantoms -> " << dir.string() << '\n';
  });

  // serve
  std::string sv_volume, sv_landmarks, sv_host = "127.0.0.1";
  int sv_port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP slice and landmark service for the annotator");
  serve_cmd->add_option("--volume", sv_volume)->required();
  serve_cmd->add_option("--landmarks", sv_landmarks, "Landmark file read and written by the service");
  serve_cmd->add_option("--host", sv_host);
  serve_cmd->add_option("--port", sv_port, "0 picks a free port");
  serve_cmd->callback([&] {
    resolve();
    fs::path lmk = sv_landmarks;
    if (lmk.empty()) {
      lmk = sv_volume;
      lmk.replace_filename(lmk.stem().string() + "_landmarks.lmk");
    }
    AnnotationServer server(load_volume(sv_volume), lmk);
    const int port = server.bind(sv_host, sv_port);
    std::cout << "serve: http://" << sv_host << ':' << port << " landmarks " << lmk.string() << std::endl;
    active_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.run();
    active_server = nullptr;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: cli: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

}  // namespace palate::cli
