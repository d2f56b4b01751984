#include "foley/cli/cli.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <unistd.h>

#include "foley/dit/pipeline.hpp"
#include "foley/dsp/envelope.hpp"
#include "foley/error.hpp"
#include "foley/io/checkpoint.hpp"
#include "foley/io/envelope_json.hpp"
#include "foley/io/manifest.hpp"
#include "foley/io/tensor_file.hpp"
#include "foley/io/wav.hpp"
#include "foley/metrics/metrics.hpp"
#include "foley/predictor/predictor.hpp"
#include "foley/service/service.hpp"
#include "foley/toybench/toybench.hpp"

namespace foley::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path data_dir() {
  const char* env = std::getenv("FOLEYCTL_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path(".foleyctl");
}

namespace {

// Shared state of one invocation: the record written to runs/.
struct Run {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  json metrics = json::object();
  json outputs = json::array();
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

ad::Tensor tensor_from_file(const fs::path& p) {
  const auto t = io::read_tensor(p);
  ad::Shape shape(t.dims.begin(), t.dims.end());
  return ad::Tensor::from_data(shape, t.values);
}

void tensor_to_file(const fs::path& p, const ad::Tensor& t) {
  io::TensorData d;
  d.dims.assign(t.shape().begin(), t.shape().end());
  d.values = t.values();
  io::write_tensor(p, d);
}

// Reads plain or quantized envelope JSON; quantized files are expanded.
dsp::Envelope load_any_envelope(const fs::path& p, const dsp::RmsConfig& rms) {
  const json j = io::read_json(p);
  if (io::is_quantized_json(j)) return dsp::mu_law_expand(io::quantized_from_json(j), rms);
  return io::envelope_from_json(j);
}

struct Dataset {
  fs::path dir;
  std::vector<io::ManifestEntry> entries;
  std::optional<toybench::ToySpec> spec;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.dir = dir;
  const fs::path manifest = fs::is_directory(dir) ? dir / "manifest.jsonl" : dir;
  d.entries = io::parse_manifest(manifest);
  if (d.entries.empty()) throw InvalidInput("dataset " + dir.string() + " is empty");
  const fs::path spec_path = manifest.parent_path() / "toyspec.json";
  if (fs::exists(spec_path)) d.spec = toybench::spec_from_json(io::read_json(spec_path));
  return d;
}

dsp::RmsConfig dataset_rms(const Dataset& d) { return d.spec ? d.spec->rms : dsp::RmsConfig{}; }

ad::Tensor semantic_table_for(const Dataset& d, const std::string& table_path) {
  if (!table_path.empty()) return tensor_from_file(table_path);
  if (d.spec) return toybench::class_embedding_table(*d.spec);
  throw InvalidInput("dataset has no toyspec.json; pass --semantic-table");
}

void write_record(const Run& run, int code, double seconds) {
  const fs::path dir = data_dir() / "runs";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return;
  const auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
  json rec{{"tool", "foleyctl"},
           {"version", kVersion},
           {"command", run.command},
           {"args", run.args},
           {"seed", run.seed},
           {"exit_code", code},
           {"seconds", seconds},
           {"timestamp_ms", stamp},
           {"metrics", run.metrics},
           {"outputs", run.outputs}};
  static std::atomic<unsigned> serial{0};
  const std::string name = std::to_string(stamp) + "-" + std::to_string(::getpid()) + "-" + std::to_string(serial++) + "-" +
                           (run.command.empty() ? std::string("none") : run.command.substr(0, run.command.find(' '))) + ".json";
  try {
    io::write_json(dir / name, rec);
  } catch (const std::exception&) {
  }
}

void note_output(Run& run, const fs::path& p) { run.outputs.push_back(p.string()); }

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Run run;
  run.args = args;
  run.out = &out;
  run.err = &err;

  CLI::App app{"Envelope-controlled Foley synthesis toolkit", "foleyctl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // extract-rms
  std::string in_path, out_path;
  std::size_t window = 512, hop = 128, kernel = 15, classes = 64;
  bool no_normalize = false, smooth_flag = false;
  auto* extract = app.add_subcommand("extract-rms", "Frame-wise RMS envelope of a WAV file");
  extract->add_option("input", in_path, "Input WAV")->required()->check(CLI::ExistingFile);
  extract->add_option("-o,--output", out_path, "Envelope JSON")->required();
  extract->add_option("--window", window, "Window length W in samples")->capture_default_str();
  extract->add_option("--hop", hop, "Hop h in samples")->capture_default_str();
  extract->add_flag("--no-normalize", no_normalize, "Skip peak normalization");
  extract->add_flag("--smooth", smooth_flag, "Apply the moving-average filter");
  extract->add_option("--kernel", kernel, "Smoothing kernel")->capture_default_str();

  // smooth
  auto* smooth = app.add_subcommand("smooth", "Moving-average smoothing of an envelope");
  smooth->add_option("input", in_path)->required()->check(CLI::ExistingFile);
  smooth->add_option("-o,--output", out_path)->required();
  smooth->add_option("--kernel", kernel)->capture_default_str();

  // quantize
  double mu = -1.0;
  auto* quantize = app.add_subcommand("quantize", "Mu-law class indices of an envelope");
  quantize->add_option("input", in_path)->required()->check(CLI::ExistingFile);
  quantize->add_option("-o,--output", out_path)->required();
  quantize->add_option("--classes", classes)->capture_default_str();
  quantize->add_option("--mu", mu, "Defaults to classes - 1");

  // predict-envelope
  std::string model_dir, quantized_out;
  auto* predict = app.add_subcommand("predict-envelope", "Envelope from a feature sequence");
  predict->add_option("features", in_path, "Feature tensor [T, D]")->required()->check(CLI::ExistingFile);
  predict->add_option("--model", model_dir, "Predictor checkpoint")->required()->check(CLI::ExistingDirectory);
  predict->add_option("-o,--output", out_path, "Expanded envelope JSON")->required();
  predict->add_option("--quantized", quantized_out, "Also write the class indices");

  // train-predictor
  std::string data_path, head = "classification";
  std::size_t epochs = 20, batch = 16;
  double lr = 1e-3, weight_decay = 1e-3, val_fraction = 0.1;
  std::uint64_t seed = 0;
  auto* train_pred = app.add_subcommand("train-predictor", "Train the envelope predictor");
  train_pred->add_option("--data", data_path, "Dataset directory or manifest")->required();
  train_pred->add_option("-o,--output", out_path, "Checkpoint directory")->required();
  train_pred->add_option("--epochs", epochs)->capture_default_str();
  train_pred->add_option("--batch", batch)->capture_default_str();
  train_pred->add_option("--lr", lr)->capture_default_str();
  train_pred->add_option("--weight-decay", weight_decay)->capture_default_str();
  train_pred->add_option("--val-fraction", val_fraction)->capture_default_str()->check(CLI::Range(0.0, 0.9));
  train_pred->add_option("--head", head)->check(CLI::IsMember({"classification", "regression"}))->capture_default_str();
  train_pred->add_option("--seed", seed)->capture_default_str();

  // train-codec
  std::size_t steps = 1500, crop = 1024;
  auto* train_codec = app.add_subcommand("train-codec", "Train the latent audio codec");
  train_codec->add_option("--data", data_path)->required();
  train_codec->add_option("-o,--output", out_path)->required();
  train_codec->add_option("--steps", steps)->capture_default_str();
  train_codec->add_option("--batch", batch)->capture_default_str();
  train_codec->add_option("--crop", crop)->capture_default_str();
  train_codec->add_option("--lr", lr)->capture_default_str();
  train_codec->add_option("--seed", seed)->capture_default_str();

  // train-dit
  std::string codec_dir, table_path;
  dit::DiTConfig dit_cfg;
  double cfg_dropout = 0.1, beta_end = 0.02;
  auto* train_dit = app.add_subcommand("train-dit", "Train the base diffusion transformer");
  train_dit->add_option("--data", data_path)->required();
  train_dit->add_option("--codec", codec_dir, "Codec checkpoint")->required()->check(CLI::ExistingDirectory);
  train_dit->add_option("-o,--output", out_path, "Model directory")->required();
  train_dit->add_option("--steps", steps)->capture_default_str();
  train_dit->add_option("--batch", batch)->capture_default_str();
  train_dit->add_option("--lr", lr)->capture_default_str();
  train_dit->add_option("--cfg-dropout", cfg_dropout)->capture_default_str();
  train_dit->add_option("--beta-end", beta_end, "Final beta of the linear noise schedule")
      ->capture_default_str()
      ->check(CLI::Range(1e-4, 0.5));
  train_dit->add_option("--layers", dit_cfg.layers)->capture_default_str();
  train_dit->add_option("--dim", dit_cfg.model_dim)->capture_default_str();
  train_dit->add_option("--heads", dit_cfg.heads)->capture_default_str();
  train_dit->add_option("--patch", dit_cfg.patch)->capture_default_str();
  train_dit->add_option("--semantic-table", table_path, "Class embeddings [classes, dim]");
  train_dit->add_option("--seed", seed)->capture_default_str();

  // train-controlnet
  double depth_factor = 0.2;
  auto* train_cn = app.add_subcommand("train-controlnet", "Attach and train the envelope ControlNet");
  train_cn->add_option("--data", data_path)->required();
  train_cn->add_option("--model", model_dir, "Model directory with a trained base")->required()->check(
      CLI::ExistingDirectory);
  train_cn->add_option("-o,--output", out_path, "Output model directory (default: in place)");
  train_cn->add_option("--depth-factor", depth_factor)->capture_default_str()->check(CLI::Range(1e-9, 1.0));
  train_cn->add_option("--steps", steps)->capture_default_str();
  train_cn->add_option("--batch", batch)->capture_default_str();
  train_cn->add_option("--lr", lr)->capture_default_str();
  train_cn->add_option("--seed", seed)->capture_default_str();

  // generate
  std::string envelope_path, embedding_path, measured_out;
  std::optional<int> gen_class;
  std::optional<double> seconds;
  double cfg_scale = 2.0;
  std::size_t gen_steps = 150;
  auto* gen = app.add_subcommand("generate", "Generate audio, optionally following an envelope");
  gen->add_option("--model", model_dir)->required()->check(CLI::ExistingDirectory);
  gen->add_option("--envelope", envelope_path, "Envelope JSON (plain or quantized)")->check(CLI::ExistingFile);
  auto* class_opt = gen->add_option("--class", gen_class, "Semantic class index");
  gen->add_option("--embedding", embedding_path, "Semantic embedding tensor [1, dim]")
      ->check(CLI::ExistingFile)
      ->excludes(class_opt);
  gen->add_option("--steps", gen_steps)->capture_default_str();
  gen->add_option("--cfg", cfg_scale)->capture_default_str();
  gen->add_option("--seconds", seconds, "Duration (default: model clip length)");
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("-o,--output", out_path, "Output WAV")->required();
  gen->add_option("--measured", measured_out, "Also write the RMS envelope of the result");

  // eval
  std::vector<std::string> e_l1_pair, acc_pair, frechet_pair, cosine_pair;
  int acc_k = 5;
  auto* eval = app.add_subcommand("eval", "Metrics over file pairs");
  eval->add_option("--e-l1", e_l1_pair, "Two envelope JSON files")->expected(2);
  eval->add_option("--acc", acc_pair, "Predicted and ground-truth envelopes")->expected(2);
  eval->add_option("--k", acc_k, "Tolerance for --acc")->capture_default_str();
  eval->add_option("--frechet", frechet_pair, "Two embedding tensors [N, D]")->expected(2);
  eval->add_option("--cosine", cosine_pair, "Two paired embedding tensors [N, D]")->expected(2);
  eval->add_option("--classes", classes)->capture_default_str();

  // toybench gen
  auto* toy = app.add_subcommand("toybench", "Synthetic benchmark data");
  toy->require_subcommand(1);
  std::size_t count = 256;
  bool hard = false;
  std::size_t min_events = 0, max_events = 4;
  auto* toy_gen = toy->add_subcommand("gen", "Write a toy dataset");
  toy_gen->add_option("-o,--output", out_path, "Dataset directory")->required();
  toy_gen->add_option("--count", count)->capture_default_str();
  toy_gen->add_option("--seed", seed)->capture_default_str();
  toy_gen->add_option("--min-events", min_events)->capture_default_str();
  toy_gen->add_option("--max-events", max_events)->capture_default_str();
  toy_gen->add_flag("--hard", hard, "Add noise to the features");

  // serve
  std::string host = "127.0.0.1", predictor_dir, service_dir;
  int port = 8080;
  std::size_t workers = 1;
  auto* serve = app.add_subcommand("serve", "HTTP session service");
  serve->add_option("--model", model_dir, "Model directory for generation")->check(CLI::ExistingDirectory);
  serve->add_option("--predictor", predictor_dir, "Predictor checkpoint")->check(CLI::ExistingDirectory);
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--workers", workers)->capture_default_str()->check(CLI::PositiveNumber);
  serve->add_option("--data-dir", service_dir, "Session storage (default: $FOLEYCTL_DATA_DIR/service)");

  const auto started = std::chrono::steady_clock::now();
  auto finish = [&](int code) {
    write_record(run, code, std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    return code;
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return finish(kExitValidation);
  }

  for (auto* sub : app.get_subcommands()) {
    run.command = sub->get_name();
    for (auto* inner : sub->get_subcommands()) run.command += " " + inner->get_name();
  }
  run.seed = seed;

  try {
    if (extract->parsed()) {
      dsp::RmsConfig rms;
      rms.window = window;
      rms.hop = hop;
      rms.smoothing_kernel = kernel;
      rms.validate();
      auto w = dsp::downmix(io::read_wav(in_path));
      if (!no_normalize) w = dsp::normalize_waveform(w);
      auto env = dsp::compute_rms(w, rms);
      if (smooth_flag) env = dsp::smooth_envelope(env, kernel);
      io::write_envelope(out_path, env);
      note_output(run, out_path);
      run.metrics["frames"] = env.size();
      out << env.size() << " frames\n";
    } else if (smooth->parsed()) {
      auto env = dsp::smooth_envelope(io::read_envelope(in_path), kernel);
      io::write_envelope(out_path, env);
      note_output(run, out_path);
    } else if (quantize->parsed()) {
      dsp::RmsConfig rms;
      rms.num_classes = classes;
      rms.mu = mu > 0.0 ? mu : static_cast<double>(classes) - 1.0;
      rms.validate();
      const auto env = io::read_envelope(in_path);
      auto q = dsp::mu_law_compress(env, rms);
      io::write_json(out_path, io::quantized_to_json(q, dsp::mu_law_expand(q, rms)));
      note_output(run, out_path);
    } else if (predict->parsed()) {
      auto model = predictor::load_predictor(model_dir);
      const auto rms = predictor::load_predictor_rms(model_dir);
      const auto p = predictor::predict_envelope(*model, tensor_from_file(in_path), rms);
      io::write_envelope(out_path, p.envelope);
      note_output(run, out_path);
      if (!quantized_out.empty()) {
        io::write_json(quantized_out, io::quantized_to_json(p.classes, p.envelope));
        note_output(run, quantized_out);
      }
      run.metrics["frames"] = p.envelope.size();
    } else if (train_pred->parsed()) {
      const auto data = load_dataset(data_path);
      const auto rms = dataset_rms(data);
      predictor::PredictorConfig cfg;
      cfg.num_classes = rms.num_classes;
      cfg.head = head == "regression" ? predictor::Head::regression : predictor::Head::classification;
      std::vector<predictor::PredictorExample> examples;
      for (const auto& e : data.entries) {
        if (e.feature_path.empty() || e.envelope_path.empty())
          throw InvalidInput("manifest entry " + e.id + " lacks features or envelope");
        const auto features = tensor_from_file(e.feature_path);
        if (examples.empty()) cfg.input_dim = features.dim(1);
        const auto env = dsp::smooth_envelope(io::read_envelope(e.envelope_path), rms.smoothing_kernel);
        if (examples.empty()) {
          const std::size_t n = env.size();
          cfg.upsample_sizes = {std::max<std::size_t>(1, n / 2), std::max<std::size_t>(1, n - n / 20), n};
          std::sort(cfg.upsample_sizes.begin(), cfg.upsample_sizes.end());
        }
        examples.push_back(predictor::make_example(features, env, cfg, rms));
      }
      const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(examples.size()));
      std::vector<predictor::PredictorExample> val(examples.end() - static_cast<std::ptrdiff_t>(n_val), examples.end());
      examples.resize(examples.size() - n_val);
      Rng rng(seed);
      predictor::EnvelopePredictor model(cfg, rng);
      predictor::PredictorTrainConfig tc;
      tc.epochs = epochs;
      tc.batch = batch;
      tc.lr = lr;
      tc.weight_decay = weight_decay;
      tc.seed = derive_seed(seed, 1);
      tc.on_epoch = [&](std::size_t ep, double loss, const predictor::PredictorEval& v) {
        out << "epoch " << ep << " loss " << loss;
        if (!val.empty()) out << " val_e_l1 " << v.e_l1 << " acc@5 " << v.acc5;
        out << "\n";
      };
      const auto report = predictor::train_predictor(model, examples, val, tc, rms);
      predictor::save_predictor(out_path, model, rms);
      note_output(run, out_path);
      run.metrics["train_loss"] = report.train_loss.empty() ? 0.0 : report.train_loss.back();
      if (!val.empty()) {
        run.metrics["best_epoch"] = report.best_epoch;
        run.metrics["best_val_e_l1"] = report.best_e_l1;
        run.metrics["val_acc5"] = report.val[report.best_epoch].acc5;
      }
    } else if (train_codec->parsed()) {
      const auto data = load_dataset(data_path);
      std::vector<dsp::Waveform> clips;
      for (const auto& e : data.entries) clips.push_back(dsp::downmix(io::read_wav(e.audio_path)));
      Rng rng(seed);
      dit::LatentCodec codec(dit::CodecConfig{}, rng);
      dit::CodecTrainConfig cc;
      cc.steps = steps;
      cc.batch = batch;
      cc.crop = crop;
      cc.lr = lr;
      cc.seed = derive_seed(seed, 1);
      const auto report = dit::train_codec(codec, clips, cc);
      io::save_checkpoint(out_path, codec,
                          {{"kind", "codec"}, {"config", codec.config().to_json()}, {"latent_scale", codec.latent_scale}});
      note_output(run, out_path);
      run.metrics["final_loss"] = report.losses.empty() ? 0.0 : report.losses.back();
      run.metrics["latent_scale"] = report.latent_scale;
      out << "latent_scale " << report.latent_scale << "\n";
    } else if (train_dit->parsed()) {
      const auto data = load_dataset(data_path);
      const auto table = semantic_table_for(data, table_path);
      dit::FoleyModel m;
      Rng rng(seed);
      const auto codec_meta = io::read_checkpoint_meta(codec_dir);
      m.codec = std::make_unique<dit::LatentCodec>(dit::CodecConfig::from_json(codec_meta.at("config")), rng);
      io::load_checkpoint(codec_dir, *m.codec);
      m.codec->latent_scale = codec_meta.at("latent_scale").get<double>();
      m.schedule_config.beta_end = beta_end;
      m.schedule = m.schedule_config.build();
      m.semantic_table = table;
      m.rms = dataset_rms(data);
      dit_cfg.cross_attn_dim = table.dim(1);
      dit_cfg.latent_channels = m.codec->config().latent_channels;
      m.base = std::make_unique<dit::DiTModel>(dit_cfg, rng);
      std::vector<dit::LatentExample> examples;
      for (const auto& e : data.entries) {
        const auto w = dsp::downmix(io::read_wav(e.audio_path));
        m.sample_rate = w.sample_rate;
        m.clip_seconds = static_cast<double>(w.num_frames()) / static_cast<double>(w.sample_rate);
        const auto env = e.envelope_path.empty() ? dsp::compute_rms(w, m.rms) : io::read_envelope(e.envelope_path);
        ad::Tensor sem;
        if (e.label >= 0) sem = m.semantic_for_class(e.label);
        examples.push_back(dit::latent_example(m, w, env, sem));
      }
      m.latent_clip = dit::max_abs_latent(examples);
      dit::DiffusionTrainConfig tc;
      tc.steps = steps;
      tc.batch = batch;
      tc.lr = lr;
      tc.cfg_dropout = cfg_dropout;
      tc.seed = derive_seed(seed, 1);
      tc.on_step = [&](std::size_t s, double loss) {
        if ((s + 1) % 100 == 0) out << "step " << s + 1 << " loss " << loss << "\n";
      };
      const auto report = dit::train_base(*m.base, examples, m.schedule, tc);
      dit::save_model(out_path, m);
      note_output(run, out_path);
      run.metrics["loss_windows"] = dit::windowed_means(report.losses, 100);
    } else if (train_cn->parsed()) {
      const auto data = load_dataset(data_path);
      auto m = dit::load_model(model_dir);
      if (m.controlnet) throw InvalidInput("model already has a ControlNet");
      const auto base_hash = ad::parameter_hash(*m.base);
      std::vector<dit::LatentExample> examples;
      for (const auto& e : data.entries) {
        const auto w = dsp::downmix(io::read_wav(e.audio_path));
        const auto env = e.envelope_path.empty() ? dsp::compute_rms(w, m.rms) : io::read_envelope(e.envelope_path);
        ad::Tensor sem;
        if (e.label >= 0) sem = m.semantic_for_class(e.label);
        examples.push_back(dit::latent_example(m, w, env, sem));
      }
      m.controlnet = dit::attach_controlnet(*m.base, depth_factor);
      dit::DiffusionTrainConfig tc;
      tc.steps = steps;
      tc.batch = batch;
      tc.lr = lr;
      tc.seed = derive_seed(seed, 1);
      tc.on_step = [&](std::size_t s, double loss) {
        if ((s + 1) % 100 == 0) out << "step " << s + 1 << " loss " << loss << "\n";
      };
      const auto report = dit::train_controlnet(*m.base, *m.controlnet, examples, m.schedule, tc);
      if (ad::parameter_hash(*m.base) != base_hash) throw Error("base parameters changed during ControlNet training");
      const fs::path dest = out_path.empty() ? fs::path(model_dir) : fs::path(out_path);
      dit::save_model(dest, m);
      note_output(run, dest);
      run.metrics["loss_windows"] = dit::windowed_means(report.losses, 100);
      run.metrics["controlled_layers"] = m.controlnet->size();
    } else if (gen->parsed()) {
      auto m = dit::load_model(model_dir);
      dit::GenerateRequest req;
      req.steps = gen_steps;
      req.cfg_scale = cfg_scale;
      req.seed = seed;
      req.seconds_total = seconds;
      if (gen_class) req.semantic = m.semantic_for_class(*gen_class);
      if (!embedding_path.empty()) req.semantic = tensor_from_file(embedding_path);
      if (!envelope_path.empty()) req.envelope = load_any_envelope(envelope_path, m.rms);
      const auto w = dit::generate(m, req);
      io::write_wav(out_path, w, io::WavEncoding::float32);
      note_output(run, out_path);
      const auto measured = dsp::compute_rms(w, m.rms);
      if (req.envelope) {
        const auto target = dsp::resample_envelope(*req.envelope, measured.size());
        const double d = metrics::e_l1(measured.values, target.values);
        run.metrics["e_l1_vs_envelope"] = d;
        out << "e_l1 " << d << "\n";
      }
      if (!measured_out.empty()) {
        io::write_envelope(measured_out, measured);
        note_output(run, measured_out);
      }
    } else if (eval->parsed()) {
      if (e_l1_pair.empty() && acc_pair.empty() && frechet_pair.empty() && cosine_pair.empty())
        throw InvalidInput("eval needs at least one of --e-l1, --acc, --frechet, --cosine");
      dsp::RmsConfig rms;
      rms.num_classes = classes;
      rms.mu = static_cast<double>(classes) - 1.0;
      if (!e_l1_pair.empty()) {
        const auto a = io::read_envelope(e_l1_pair[0]);
        const auto b = io::read_envelope(e_l1_pair[1]);
        run.metrics["e_l1"] = metrics::e_l1(a, b);
      }
      if (!acc_pair.empty()) {
        auto classes_of = [&](const std::string& p) {
          const json j = io::read_json(p);
          return io::is_quantized_json(j) ? io::quantized_from_json(j)
                                          : dsp::mu_law_compress(io::envelope_from_json(j), rms);
        };
        run.metrics["acc@" + std::to_string(acc_k)] =
            metrics::acc_at_k(classes_of(acc_pair[0]), classes_of(acc_pair[1]), acc_k);
      }
      auto embeddings = [](const std::string& p) {
        const auto t = tensor_from_file(p);
        if (t.rank() != 2) throw ShapeError("embedding file " + p + " must be [N, D]");
        metrics::EmbeddingSet s{Eigen::MatrixXd(t.dim(0), t.dim(1))};
        for (std::size_t i = 0; i < t.dim(0); ++i)
          for (std::size_t j = 0; j < t.dim(1); ++j)
            s.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.data()[i * t.dim(1) + j];
        return s;
      };
      if (!frechet_pair.empty())
        run.metrics["frechet"] = metrics::frechet_distance(embeddings(frechet_pair[0]), embeddings(frechet_pair[1]));
      if (!cosine_pair.empty())
        run.metrics["cosine"] = metrics::cosine_score(embeddings(cosine_pair[0]), embeddings(cosine_pair[1]));
      out << run.metrics.dump(2) << "\n";
    } else if (toy_gen->parsed()) {
      toybench::ToySpec spec;
      spec.seed = seed;
      spec.hard_mode = hard;
      spec.min_events = min_events;
      spec.max_events = max_events;
      spec.validate();
      const auto clips = toybench::gen_dataset(spec, count);
      toybench::write_dataset(out_path, spec, clips);
      note_output(run, out_path);
      run.metrics["clips"] = clips.size();
      out << "wrote " << clips.size() << " clips to " << out_path << "\n";
    } else if (serve->parsed()) {
      service::ServiceConfig sc;
      sc.workers = workers;
      sc.data_dir = service_dir.empty() ? data_dir() / "service" : fs::path(service_dir);
      service::Generator generator;
      if (!model_dir.empty()) {
        auto m = std::make_shared<dit::FoleyModel>(dit::load_model(model_dir));
        sc.rms = m->rms;
        generator = service::model_generator(m);
      }
      service::FeaturePredictor predictor_fn;
      if (!predictor_dir.empty()) {
        std::shared_ptr<predictor::EnvelopePredictor> pm = predictor::load_predictor(predictor_dir);
        const auto prms = predictor::load_predictor_rms(predictor_dir);
        auto mu = std::make_shared<std::mutex>();
        predictor_fn = [pm, prms, mu](const ad::Tensor& f) {
          std::lock_guard lock(*mu);
          return predictor::predict_envelope(*pm, f, prms).envelope;
        };
      }
      service::FoleyService svc(sc, generator, predictor_fn);
      const int bound = svc.bind_port(host, port);
      if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
      out << "listening on http://" << host << ":" << bound << std::endl;
      svc.listen_after_bind();
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return finish(kExitValidation);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return finish(kExitValidation);
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return finish(kExitValidation);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return finish(kExitValidation);
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return finish(kExitValidation);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return finish(kExitRuntime);
  }
  return finish(kExitOk);
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace foley::cli
