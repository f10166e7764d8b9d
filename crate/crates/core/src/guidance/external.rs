use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::{json, Value};

use super::{GuidanceProvider, GuidanceRequest, RefineRequest, VideoRefiner};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::pfm;

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    counter: u64,
}

/// Provider backed by a child process speaking line-delimited JSON.
///
/// Each request is one line on the child's stdin; images travel as PFM files
/// in `workdir`. Guidance requests look like
/// `{"op":"guidance","image":…,"reference":…,"camera":{…},"t":…,"time":…,"seed":…}`
/// and expect `{"gradient": path}`; refine requests carry `frames`, `clean`,
/// `cameras`, `times`, `t`, `seed` and expect `{"frames": [path, …]}`. A reply
/// with an `error` key fails the call.
pub struct ExternalProvider {
    workdir: PathBuf,
    session: Mutex<Session>,
}

impl ExternalProvider {
    pub fn spawn(program: &str, args: &[String], workdir: &Path) -> Result<Self> {
        std::fs::create_dir_all(workdir)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Provider(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            workdir: workdir.to_path_buf(),
            session: Mutex::new(Session {
                child,
                stdin,
                stdout,
                counter: 0,
            }),
        })
    }

    fn call(&self, build: impl FnOnce(&Path, u64) -> Result<Value>) -> Result<Value> {
        let mut session = self.session.lock().map_err(|_| Error::Provider("session poisoned".into()))?;
        session.counter += 1;
        let request = build(&self.workdir, session.counter)?;
        let mut line = serde_json::to_string(&request).map_err(|e| Error::Provider(e.to_string()))?;
        line.push('\n');
        session
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| session.stdin.flush())
            .map_err(|e| Error::Provider(format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = session
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Provider(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Provider("provider closed its output".into()));
        }
        let value: Value =
            serde_json::from_str(&reply).map_err(|e| Error::Provider(format!("bad reply {reply:?}: {e}")))?;
        if let Some(err) = value.get("error") {
            return Err(Error::Provider(err.to_string()));
        }
        Ok(value)
    }
}

fn path_field(value: &Value, key: &str) -> Result<PathBuf> {
    value
        .get(key)
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Provider(format!("reply lacks string field {key:?}")))
}

fn save(dir: &Path, name: String, image: &Image) -> Result<String> {
    let path = dir.join(name);
    pfm::save(&path, image)?;
    Ok(path.to_string_lossy().into_owned())
}

impl GuidanceProvider for ExternalProvider {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<Image> {
        let reply = self.call(|dir, id| {
            let image = save(dir, format!("request_{id:06}.pfm"), request.image)?;
            let reference = match request.reference {
                Some(r) => Value::String(save(dir, format!("reference_{id:06}.pfm"), r)?),
                None => Value::Null,
            };
            Ok(json!({
                "op": "guidance",
                "image": image,
                "reference": reference,
                "camera": request.camera,
                "t": request.t,
                "time": request.time,
                "seed": request.seed,
            }))
        })?;
        let grad = pfm::load(&path_field(&reply, "gradient")?)?;
        request.image.check_shape(&grad, "external gradient")?;
        Ok(grad)
    }
}

impl VideoRefiner for ExternalProvider {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<Vec<Image>> {
        let reply = self.call(|dir, id| {
            let mut noisy = Vec::new();
            let mut clean = Vec::new();
            for (k, (n, c)) in request.noisy.iter().zip(request.clean).enumerate() {
                noisy.push(save(dir, format!("noisy_{id:06}_{k:03}.pfm"), n)?);
                clean.push(save(dir, format!("clean_{id:06}_{k:03}.pfm"), c)?);
            }
            Ok(json!({
                "op": "refine",
                "frames": noisy,
                "clean": clean,
                "cameras": request.cameras,
                "times": request.times,
                "t": request.t,
                "seed": request.seed,
            }))
        })?;
        let frames = reply
            .get("frames")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Provider("reply lacks \"frames\" array".into()))?;
        if frames.len() != request.noisy.len() {
            return Err(Error::dimension("refined frames", request.noisy.len(), frames.len()));
        }
        frames
            .iter()
            .map(|f| {
                let path = f.as_str().ok_or_else(|| Error::Provider("frame path must be a string".into()))?;
                pfm::load(Path::new(path))
            })
            .collect()
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            // Closing stdin lets well-behaved providers exit on EOF.
            let _ = session.stdin.flush();
            let _ = session.child.kill();
            let _ = session.child.wait();
        }
    }
}
