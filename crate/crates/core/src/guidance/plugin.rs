//! Versioned request/response records for out-of-process providers, a
//! client that implements [`GuidanceProvider`] over any byte stream, and a
//! serve loop that exposes a local provider.
//!
//! Every record starts with a 4-byte magic and a little-endian u32 version.
//! Images travel as one single-channel little-endian PFM plane per channel.

use std::io::{BufReader, ErrorKind, Read, Write};
use std::sync::Mutex;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conditions::ConditionBundle;
use super::provider::{Capabilities, EpsilonPrediction, GuidanceProvider};
use super::schedule::{make_schedule, DiffusionSchedule};
use crate::render::{Camera, RasterImage};
use crate::{Error, Result};

pub const REQUEST_MAGIC: &[u8; 4] = b"SCRQ";
pub const RESPONSE_MAGIC: &[u8; 4] = b"SCRS";
pub const PROTOCOL_VERSION: u32 = 1;
const MAX_STRING: usize = 1 << 20;
const MAX_IMAGE_SAMPLES: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl From<&DiffusionSchedule> for ScheduleSpec {
    fn from(s: &DiffusionSchedule) -> Self {
        Self {
            num_steps: s.num_steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Describe,
    PredictEpsilon {
        t: usize,
        schedule: ScheduleSpec,
        camera: Camera,
        conditions: ConditionBundle,
        x_t: RasterImage,
    },
    Inpaint {
        camera: Camera,
        conditions: ConditionBundle,
        partial: RasterImage,
        known: Vec<bool>,
    },
    Refine {
        t: usize,
        schedule: ScheduleSpec,
        seed: u64,
        camera: Camera,
        conditions: ConditionBundle,
        x0: RasterImage,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Describe {
        capabilities: Capabilities,
        identity_dim: usize,
        channels: Vec<String>,
    },
    Epsilon(EpsilonPrediction),
    Image(RasterImage),
    Error(String),
}

type IoResult<T> = std::io::Result<T>;

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(ErrorKind::InvalidData, msg.into())
}

fn put_str(w: &mut impl Write, s: &str) -> IoResult<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_str(r: &mut impl Read) -> IoResult<String> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    if n > MAX_STRING {
        return Err(bad("string too long"));
    }
    let mut b = vec![0; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| bad("string is not UTF-8"))
}

fn put_image(w: &mut impl Write, img: &RasterImage) -> IoResult<()> {
    w.write_u32::<LittleEndian>(img.width as u32)?;
    w.write_u32::<LittleEndian>(img.height as u32)?;
    w.write_u32::<LittleEndian>(img.channels as u32)?;
    for c in 0..img.channels {
        let mut blob = Vec::new();
        img.channel(c)
            .write_pfm_to(&mut blob)
            .map_err(|e| bad(e.to_string()))?;
        w.write_u32::<LittleEndian>(blob.len() as u32)?;
        w.write_all(&blob)?;
    }
    Ok(())
}

fn get_image(r: &mut impl Read) -> IoResult<RasterImage> {
    let w = r.read_u32::<LittleEndian>()? as usize;
    let h = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    if w == 0 || h == 0 || c == 0 || w.saturating_mul(h).saturating_mul(c) > MAX_IMAGE_SAMPLES {
        return Err(bad(format!("image size {w}x{h}x{c} out of range")));
    }
    let mut img = RasterImage::new(w, h, c);
    for ch in 0..c {
        let n = r.read_u32::<LittleEndian>()? as usize;
        if n > 64 + w * h * 4 {
            return Err(bad("PFM plane too large"));
        }
        let mut blob = vec![0; n];
        r.read_exact(&mut blob)?;
        let plane = RasterImage::read_pfm_from(&mut &blob[..]).map_err(|e| bad(e.to_string()))?;
        if plane.width != w || plane.height != h || plane.channels != 1 {
            return Err(bad("PFM plane does not match the declared image size"));
        }
        for (i, v) in plane.data.iter().enumerate() {
            img.data[i * c + ch] = *v;
        }
    }
    Ok(img)
}

fn put_opt_image(w: &mut impl Write, img: &Option<RasterImage>) -> IoResult<()> {
    match img {
        None => w.write_u8(0),
        Some(i) => {
            w.write_u8(1)?;
            put_image(w, i)
        }
    }
}

fn get_opt_image(r: &mut impl Read) -> IoResult<Option<RasterImage>> {
    match r.read_u8()? {
        0 => Ok(None),
        1 => Ok(Some(get_image(r)?)),
        b => Err(bad(format!("bad option tag {b}"))),
    }
}

fn put_camera(w: &mut impl Write, c: &Camera) -> IoResult<()> {
    for v in [
        c.azimuth,
        c.elevation,
        c.distance,
        c.fovy,
        c.look_at[0],
        c.look_at[1],
        c.look_at[2],
    ] {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.write_u32::<LittleEndian>(c.width as u32)?;
    w.write_u32::<LittleEndian>(c.height as u32)
}

fn get_camera(r: &mut impl Read) -> IoResult<Camera> {
    let mut v = [0.0; 7];
    for x in v.iter_mut() {
        *x = r.read_f64::<LittleEndian>()?;
    }
    let c = Camera {
        azimuth: v[0],
        elevation: v[1],
        distance: v[2],
        fovy: v[3],
        look_at: [v[4], v[5], v[6]],
        width: r.read_u32::<LittleEndian>()? as usize,
        height: r.read_u32::<LittleEndian>()? as usize,
    };
    c.validate().map_err(|e| bad(e.to_string()))?;
    Ok(c)
}

fn put_conditions(w: &mut impl Write, b: &ConditionBundle) -> IoResult<()> {
    put_str(w, &b.text_tag)?;
    w.write_u32::<LittleEndian>(b.identity.len() as u32)?;
    for v in &b.identity {
        w.write_f64::<LittleEndian>(*v)?;
    }
    w.write_u8(b.landmarks_missing as u8)?;
    for img in [
        &b.landmark_image,
        &b.normal_image,
        &b.canny_image,
        &b.depth_image,
    ] {
        put_opt_image(w, img)?;
    }
    Ok(())
}

fn get_conditions(r: &mut impl Read) -> IoResult<ConditionBundle> {
    let text_tag = get_str(r)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    if n > MAX_STRING {
        return Err(bad("identity vector too long"));
    }
    let identity = (0..n)
        .map(|_| r.read_f64::<LittleEndian>())
        .collect::<IoResult<Vec<_>>>()?;
    let landmarks_missing = r.read_u8()? != 0;
    Ok(ConditionBundle {
        text_tag,
        identity,
        landmarks_missing,
        landmark_image: get_opt_image(r)?,
        normal_image: get_opt_image(r)?,
        canny_image: get_opt_image(r)?,
        depth_image: get_opt_image(r)?,
    })
}

fn put_schedule(w: &mut impl Write, s: &ScheduleSpec) -> IoResult<()> {
    w.write_u32::<LittleEndian>(s.num_steps as u32)?;
    w.write_f64::<LittleEndian>(s.beta_start)?;
    w.write_f64::<LittleEndian>(s.beta_end)
}

fn get_schedule(r: &mut impl Read) -> IoResult<ScheduleSpec> {
    Ok(ScheduleSpec {
        num_steps: r.read_u32::<LittleEndian>()? as usize,
        beta_start: r.read_f64::<LittleEndian>()?,
        beta_end: r.read_f64::<LittleEndian>()?,
    })
}

fn put_header(w: &mut impl Write, magic: &[u8; 4]) -> IoResult<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(PROTOCOL_VERSION)
}

fn get_header(r: &mut impl Read, magic: &[u8; 4]) -> IoResult<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(bad(format!("bad record magic {m:?}")));
    }
    let v = r.read_u32::<LittleEndian>()?;
    if v != PROTOCOL_VERSION {
        return Err(bad(format!("unsupported protocol version {v}")));
    }
    Ok(())
}

pub fn write_request(w: &mut impl Write, req: &Request) -> IoResult<()> {
    let mut buf = Vec::new();
    put_header(&mut buf, REQUEST_MAGIC)?;
    match req {
        Request::Describe => buf.write_u8(0)?,
        Request::PredictEpsilon {
            t,
            schedule,
            camera,
            conditions,
            x_t,
        } => {
            buf.write_u8(1)?;
            buf.write_u32::<LittleEndian>(*t as u32)?;
            put_schedule(&mut buf, schedule)?;
            put_camera(&mut buf, camera)?;
            put_conditions(&mut buf, conditions)?;
            put_image(&mut buf, x_t)?;
        }
        Request::Inpaint {
            camera,
            conditions,
            partial,
            known,
        } => {
            buf.write_u8(2)?;
            put_camera(&mut buf, camera)?;
            put_conditions(&mut buf, conditions)?;
            put_image(&mut buf, partial)?;
            put_image(
                &mut buf,
                &RasterImage::from_mask(partial.width, partial.height, known),
            )?;
        }
        Request::Refine {
            t,
            schedule,
            seed,
            camera,
            conditions,
            x0,
        } => {
            buf.write_u8(3)?;
            buf.write_u32::<LittleEndian>(*t as u32)?;
            put_schedule(&mut buf, schedule)?;
            buf.write_u64::<LittleEndian>(*seed)?;
            put_camera(&mut buf, camera)?;
            put_conditions(&mut buf, conditions)?;
            put_image(&mut buf, x0)?;
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_request(r: &mut impl Read) -> IoResult<Request> {
    get_header(r, REQUEST_MAGIC)?;
    Ok(match r.read_u8()? {
        0 => Request::Describe,
        1 => Request::PredictEpsilon {
            t: r.read_u32::<LittleEndian>()? as usize,
            schedule: get_schedule(r)?,
            camera: get_camera(r)?,
            conditions: get_conditions(r)?,
            x_t: get_image(r)?,
        },
        2 => {
            let camera = get_camera(r)?;
            let conditions = get_conditions(r)?;
            let partial = get_image(r)?;
            let mask = get_image(r)?;
            if mask.width != partial.width || mask.height != partial.height || mask.channels != 1 {
                return Err(bad("known mask does not match the image"));
            }
            Request::Inpaint {
                camera,
                conditions,
                partial,
                known: mask.data.iter().map(|v| *v > 0.5).collect(),
            }
        }
        3 => Request::Refine {
            t: r.read_u32::<LittleEndian>()? as usize,
            schedule: get_schedule(r)?,
            seed: r.read_u64::<LittleEndian>()?,
            camera: get_camera(r)?,
            conditions: get_conditions(r)?,
            x0: get_image(r)?,
        },
        op => return Err(bad(format!("unknown request op {op}"))),
    })
}

pub fn write_response(w: &mut impl Write, resp: &Response) -> IoResult<()> {
    let mut buf = Vec::new();
    put_header(&mut buf, RESPONSE_MAGIC)?;
    match resp {
        Response::Error(m) => {
            buf.write_u8(1)?;
            put_str(&mut buf, m)?;
        }
        Response::Describe {
            capabilities,
            identity_dim,
            channels,
        } => {
            buf.write_u8(0)?;
            buf.write_u8(0)?;
            buf.write_u8(capabilities.to_bits())?;
            buf.write_u32::<LittleEndian>(*identity_dim as u32)?;
            buf.write_u32::<LittleEndian>(channels.len() as u32)?;
            for c in channels {
                put_str(&mut buf, c)?;
            }
        }
        Response::Epsilon(p) => {
            buf.write_u8(0)?;
            buf.write_u8(1)?;
            put_image(&mut buf, &p.cond)?;
            put_opt_image(&mut buf, &p.uncond)?;
        }
        Response::Image(img) => {
            buf.write_u8(0)?;
            buf.write_u8(2)?;
            put_image(&mut buf, img)?;
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_response(r: &mut impl Read) -> IoResult<Response> {
    get_header(r, RESPONSE_MAGIC)?;
    match r.read_u8()? {
        1 => return Ok(Response::Error(get_str(r)?)),
        0 => {}
        s => return Err(bad(format!("bad status {s}"))),
    }
    Ok(match r.read_u8()? {
        0 => {
            let capabilities = Capabilities::from_bits(r.read_u8()?);
            let identity_dim = r.read_u32::<LittleEndian>()? as usize;
            let n = r.read_u32::<LittleEndian>()? as usize;
            if n > 1024 {
                return Err(bad("too many conditioning channels"));
            }
            let channels = (0..n).map(|_| get_str(r)).collect::<IoResult<Vec<_>>>()?;
            Response::Describe {
                capabilities,
                identity_dim,
                channels,
            }
        }
        1 => Response::Epsilon(EpsilonPrediction {
            cond: get_image(r)?,
            uncond: get_opt_image(r)?,
        }),
        2 => Response::Image(get_image(r)?),
        k => return Err(bad(format!("unknown response kind {k}"))),
    })
}

/// Client side of the plug-in boundary.
pub struct ExternalProvider<T: Read + Write + Send> {
    transport: Mutex<T>,
    capabilities: Capabilities,
    identity_dim: usize,
    channels: Vec<String>,
}

impl<T: Read + Write + Send> std::fmt::Debug for ExternalProvider<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalProvider")
            .field("capabilities", &self.capabilities)
            .field("identity_dim", &self.identity_dim)
            .finish()
    }
}

impl<T: Read + Write + Send> ExternalProvider<T> {
    /// Performs the describe handshake.
    pub fn connect(mut transport: T) -> Result<Self> {
        let resp = round_trip(&mut transport, &Request::Describe)?;
        match resp {
            Response::Describe {
                capabilities,
                identity_dim,
                channels,
            } => Ok(Self {
                transport: Mutex::new(transport),
                capabilities,
                identity_dim,
                channels,
            }),
            other => Err(Error::Provider(format!(
                "unexpected handshake response {:?}",
                kind(&other)
            ))),
        }
    }

    fn call(&self, req: &Request) -> Result<Response> {
        let mut t = self
            .transport
            .lock()
            .map_err(|_| Error::Provider("transport lock poisoned".into()))?;
        round_trip(&mut *t, req)
    }

    fn call_image(&self, req: &Request) -> Result<RasterImage> {
        match self.call(req)? {
            Response::Image(img) => Ok(img),
            other => Err(Error::Provider(format!(
                "expected an image, got {}",
                kind(&other)
            ))),
        }
    }
}

fn kind(r: &Response) -> &'static str {
    match r {
        Response::Describe { .. } => "describe",
        Response::Epsilon(_) => "epsilon",
        Response::Image(_) => "image",
        Response::Error(_) => "error",
    }
}

fn round_trip<T: Read + Write>(t: &mut T, req: &Request) -> Result<Response> {
    write_request(t, req).map_err(|e| Error::Provider(format!("send failed: {e}")))?;
    match read_response(t).map_err(|e| Error::Provider(format!("receive failed: {e}")))? {
        Response::Error(m) => Err(Error::Provider(m)),
        r => Ok(r),
    }
}

impl<T: Read + Write + Send> GuidanceProvider for ExternalProvider<T> {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn identity_dim(&self) -> usize {
        self.identity_dim
    }

    fn conditioning_channels(&self) -> Vec<String> {
        self.channels.clone()
    }

    fn predict_epsilon(
        &self,
        x_t: &RasterImage,
        t: usize,
        camera: &Camera,
        conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
    ) -> Result<EpsilonPrediction> {
        match self.call(&Request::PredictEpsilon {
            t,
            schedule: schedule.into(),
            camera: *camera,
            conditions: conditions.clone(),
            x_t: x_t.clone(),
        })? {
            Response::Epsilon(p) => Ok(p),
            other => Err(Error::Provider(format!(
                "expected epsilon, got {}",
                kind(&other)
            ))),
        }
    }

    fn inpaint(
        &self,
        partial: &RasterImage,
        known: &[bool],
        camera: &Camera,
        conditions: &ConditionBundle,
    ) -> Result<RasterImage> {
        self.call_image(&Request::Inpaint {
            camera: *camera,
            conditions: conditions.clone(),
            partial: partial.clone(),
            known: known.to_vec(),
        })
    }

    fn refine(
        &self,
        x0: &RasterImage,
        t: usize,
        camera: &Camera,
        conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
        rng: &mut ChaCha8Rng,
    ) -> Result<RasterImage> {
        self.call_image(&Request::Refine {
            t,
            schedule: schedule.into(),
            seed: rng.next_u64(),
            camera: *camera,
            conditions: conditions.clone(),
            x0: x0.clone(),
        })
    }
}

fn handle(provider: &dyn GuidanceProvider, req: Request) -> Response {
    let result = match req {
        Request::Describe => Ok(Response::Describe {
            capabilities: provider.capabilities(),
            identity_dim: provider.identity_dim(),
            channels: provider.conditioning_channels(),
        }),
        Request::PredictEpsilon {
            t,
            schedule,
            camera,
            conditions,
            x_t,
        } => make_schedule(schedule.num_steps, schedule.beta_start, schedule.beta_end)
            .and_then(|s| provider.predict_epsilon(&x_t, t, &camera, &conditions, &s))
            .map(Response::Epsilon),
        Request::Inpaint {
            camera,
            conditions,
            partial,
            known,
        } => provider
            .inpaint(&partial, &known, &camera, &conditions)
            .map(Response::Image),
        Request::Refine {
            t,
            schedule,
            seed,
            camera,
            conditions,
            x0,
        } => make_schedule(schedule.num_steps, schedule.beta_start, schedule.beta_end)
            .and_then(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                provider.refine(&x0, t, &camera, &conditions, &s, &mut rng)
            })
            .map(Response::Image),
    };
    result.unwrap_or_else(|e| Response::Error(e.to_string()))
}

/// Answers requests until the peer closes the stream.
pub fn serve<T: Read + Write>(provider: &dyn GuidanceProvider, transport: T) -> Result<()> {
    let mut r = BufReader::new(transport);
    loop {
        let req = match read_request(&mut r) {
            Ok(req) => req,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => {
                let _ = write_response(r.get_mut(), &Response::Error(format!("bad request: {e}")));
                return Err(Error::Provider(format!("bad request: {e}")));
            }
        };
        let resp = handle(provider, req);
        write_response(r.get_mut(), &resp)
            .map_err(|e| Error::Provider(format!("reply failed: {e}")))?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::oracle::SyntheticTargetOracle;
    use crate::guidance::provider::{
        noise_like, provider_inpaint, provider_refine, sds_gradient_at,
    };
    use crate::render::camera_from_spherical;
    use crate::Vec3;
    use std::os::unix::net::UnixStream;

    fn cam() -> Camera {
        camera_from_spherical(15.0, 5.0, 3.0, 40.0, Vec3::zeros(), (8, 6)).unwrap()
    }

    fn gt() -> RasterImage {
        RasterImage::from_data(
            8,
            6,
            3,
            (0..144)
                .map(|i| (i as f64 * 0.21).cos() * 0.4 + 0.5)
                .collect(),
        )
        .unwrap()
    }

    fn bundle() -> ConditionBundle {
        ConditionBundle {
            text_tag: "portrait".into(),
            identity: vec![0.25; 4],
            landmark_image: Some(RasterImage::filled(8, 6, 1, 1.0)),
            landmarks_missing: false,
            normal_image: Some(RasterImage::filled(8, 6, 3, 0.5)),
            canny_image: None,
            depth_image: None,
        }
    }

    #[test]
    fn records_round_trip() {
        let reqs = vec![
            Request::Describe,
            Request::PredictEpsilon {
                t: 77,
                schedule: (&DiffusionSchedule::default()).into(),
                camera: cam(),
                conditions: bundle(),
                x_t: gt(),
            },
            Request::Inpaint {
                camera: cam(),
                conditions: bundle(),
                partial: gt(),
                known: (0..48).map(|i| i % 3 == 0).collect(),
            },
            Request::Refine {
                t: 120,
                schedule: (&DiffusionSchedule::default()).into(),
                seed: 99,
                camera: cam(),
                conditions: ConditionBundle::default(),
                x0: gt(),
            },
        ];
        for req in reqs {
            let mut buf = Vec::new();
            write_request(&mut buf, &req).unwrap();
            let back = read_request(&mut &buf[..]).unwrap();
            // Images pass through f32; the test images survive that exactly
            // only up to rounding, so compare after re-encoding.
            let mut buf2 = Vec::new();
            write_request(&mut buf2, &back).unwrap();
            assert_eq!(buf, buf2);
        }
        let mut buf = Vec::new();
        write_response(&mut buf, &Response::Error("boom".into())).unwrap();
        assert_eq!(
            read_response(&mut &buf[..]).unwrap(),
            Response::Error("boom".into())
        );
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut buf = Vec::new();
        write_request(&mut buf, &Request::Describe).unwrap();
        buf[4] = 9;
        assert!(read_request(&mut &buf[..]).is_err());
    }

    #[test]
    fn external_provider_over_socket_matches_local() {
        let (client, server) = UnixStream::pair().unwrap();
        let oracle = SyntheticTargetOracle::from_targets(vec![(cam(), gt())], 0.0, 4);
        let handle = std::thread::spawn(move || serve(&oracle, server));
        let ext = ExternalProvider::connect(client).unwrap();
        assert_eq!(ext.identity_dim(), 4);
        assert_eq!(ext.capabilities(), Capabilities::all());

        let local = SyntheticTargetOracle::from_targets(vec![(cam(), gt())], 0.0, 4);
        let s = DiffusionSchedule::default();
        let x0 = gt().map(|v| 1.0 - v);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = noise_like(&x0, &mut rng);
        let a = sds_gradient_at(&x0, &cam(), &bundle(), &ext, &s, 300, &eps, 7.5).unwrap();
        let b = sds_gradient_at(&x0, &cam(), &bundle(), &local, &s, 300, &eps, 7.5).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-5);

        let known: Vec<bool> = (0..48).map(|i| i < 24).collect();
        let partial = RasterImage::filled(8, 6, 3, 0.5);
        let ia = provider_inpaint(&ext, &partial, &known, &cam(), &bundle()).unwrap();
        let ib = provider_inpaint(&local, &partial, &known, &cam(), &bundle()).unwrap();
        assert!(ia.max_abs_diff(&ib) < 1e-6);

        let ra = provider_refine(
            &ext,
            &x0,
            120,
            &cam(),
            &bundle(),
            &s,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert!(ra.max_abs_diff(&gt()) < 1e-5);

        // Provider-side errors come back as provider errors.
        let other = camera_from_spherical(0.0, 0.0, 3.0, 40.0, Vec3::zeros(), (8, 6)).unwrap();
        let e = provider_inpaint(&ext, &partial, &known, &other, &bundle()).unwrap_err();
        assert!(matches!(e, Error::Provider(_)));

        drop(ext);
        handle.join().unwrap().unwrap();
    }
}
