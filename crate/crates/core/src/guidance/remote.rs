//! TCP client and server for the guidance wire protocol.

use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::wire::{self, code, Handshake, Kind, PROTOCOL_VERSION};
use super::{Capability, GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub timeout: Duration,
    /// Capability the server must offer.
    pub required: Capability,
    /// Protocol version this client speaks.
    pub version: u16,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig { timeout: Duration::from_secs(30), required: Capability::SingleView, version: PROTOCOL_VERSION }
    }
}

/// Guidance from a remote backend. One request is in flight per connection.
#[derive(Debug)]
pub struct RemoteProvider {
    stream: Mutex<TcpStream>,
    server: Handshake,
    config: RemoteConfig,
}

fn reply_error(version: u16, client_version: u16, payload: &[u8]) -> GuidanceError {
    match wire::decode_error(payload) {
        Ok((code::VERSION_MISMATCH, _)) => GuidanceError::VersionMismatch { client: client_version, server: version },
        Ok((code, message)) => GuidanceError::Remote { code, message },
        Err(e) => e,
    }
}

impl RemoteProvider {
    pub fn connect(addr: impl ToSocketAddrs, config: RemoteConfig) -> Result<Self, GuidanceError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| GuidanceError::Transport(std::io::Error::new(std::io::ErrorKind::NotFound, "address did not resolve")))?;
        let mut stream = TcpStream::connect_timeout(&addr, config.timeout)?;
        stream.set_read_timeout(Some(config.timeout))?;
        stream.set_write_timeout(Some(config.timeout))?;
        stream.set_nodelay(true)?;
        let hello = Handshake { capabilities: config.required.bit(), max_height: 0, max_width: 0, name: "lesplat".into() };
        wire::write_message(&mut stream, config.version, Kind::Handshake, &wire::encode_handshake(&hello))?;
        let reply = wire::read_message(&mut stream)?.ok_or_else(|| GuidanceError::Malformed("server closed during handshake".into()))?;
        let server = match reply.kind {
            Kind::Handshake if reply.version == config.version => wire::decode_handshake(&reply.payload)?,
            Kind::Handshake => return Err(GuidanceError::VersionMismatch { client: config.version, server: reply.version }),
            Kind::Error => match wire::decode_error(&reply.payload)? {
                (code::CAPABILITY_MISMATCH, _) => return Err(GuidanceError::CapabilityMismatch { needed: config.required, offered: None }),
                _ => return Err(reply_error(reply.version, config.version, &reply.payload)),
            },
            k => return Err(GuidanceError::Malformed(format!("unexpected {k:?} during handshake"))),
        };
        if server.capabilities & config.required.bit() == 0 {
            return Err(GuidanceError::CapabilityMismatch { needed: config.required, offered: Some(server.capabilities) });
        }
        debug!("connected to guidance server `{}` at {addr}", server.name);
        Ok(RemoteProvider { stream: Mutex::new(stream), server, config })
    }

    pub fn server(&self) -> &Handshake {
        &self.server
    }
}

impl GuidanceProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.server.name
    }

    fn capability(&self) -> Capability {
        self.config.required
    }

    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let (max_h, max_w) = (self.server.max_height as usize, self.server.max_width as usize);
        for img in request.rendered_views.iter().chain(&request.original_views) {
            if img.height > max_h || img.width > max_w {
                return Err(GuidanceError::Oversized { height: img.height, width: img.width, max_h, max_w });
            }
        }
        let payload = wire::encode_request(request);
        let mut stream = self.stream.lock().unwrap_or_else(|p| p.into_inner());
        wire::write_message(&mut *stream, self.config.version, Kind::Request, &payload)?;
        let reply = wire::read_message(&mut *stream)?.ok_or_else(|| GuidanceError::Malformed("server closed the connection".into()))?;
        match reply.kind {
            Kind::Response => {
                let resp = wire::decode_response(&reply.payload)?;
                resp.validate_for(request)?;
                Ok(resp)
            }
            Kind::Error => Err(reply_error(reply.version, self.config.version, &reply.payload)),
            k => Err(GuidanceError::Malformed(format!("unexpected {k:?} reply"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub version: u16,
    pub max_height: u32,
    pub max_width: u32,
    pub name: String,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { version: PROTOCOL_VERSION, max_height: 4096, max_width: 4096, name: "echo".into() }
    }
}

/// Serves one client until it disconnects.
pub fn serve_connection(stream: TcpStream, provider: &dyn GuidanceProvider, opts: &ServeOptions) -> Result<(), GuidanceError> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let send_error = |w: &mut TcpStream, c: u16, msg: &str| wire::write_message(w, opts.version, Kind::Error, &wire::encode_error(c, msg));

    let Some(hello) = wire::read_message(&mut reader)? else { return Ok(()) };
    if hello.version != opts.version {
        send_error(&mut writer, code::VERSION_MISMATCH, &format!("server speaks version {}", opts.version))?;
        return Ok(());
    }
    if hello.kind != Kind::Handshake {
        send_error(&mut writer, code::MALFORMED, "expected a handshake")?;
        return Ok(());
    }
    let offered = provider.capability().bit();
    let wanted = wire::decode_handshake(&hello.payload)?.capabilities;
    if wanted & !offered != 0 {
        send_error(&mut writer, code::CAPABILITY_MISMATCH, "requested capability not offered")?;
        return Ok(());
    }
    let me = Handshake { capabilities: offered, max_height: opts.max_height, max_width: opts.max_width, name: opts.name.clone() };
    wire::write_message(&mut writer, opts.version, Kind::Handshake, &wire::encode_handshake(&me))?;

    while let Some(msg) = wire::read_message(&mut reader)? {
        if msg.version != opts.version {
            send_error(&mut writer, code::VERSION_MISMATCH, &format!("server speaks version {}", opts.version))?;
            continue;
        }
        if msg.kind != Kind::Request {
            send_error(&mut writer, code::MALFORMED, "expected a request")?;
            continue;
        }
        let req = match wire::decode_request(&msg.payload) {
            Ok(r) => r,
            Err(e) => {
                send_error(&mut writer, code::MALFORMED, &e.to_string())?;
                continue;
            }
        };
        if req
            .rendered_views
            .iter()
            .chain(&req.original_views)
            .any(|i| i.height > opts.max_height as usize || i.width > opts.max_width as usize)
        {
            send_error(&mut writer, code::OVERSIZED, "image exceeds the negotiated maximum")?;
            continue;
        }
        match provider.guide(&req) {
            Ok(resp) => wire::write_message(&mut writer, opts.version, Kind::Response, &wire::encode_response(&resp))?,
            Err(e) => send_error(&mut writer, code::INTERNAL, &e.to_string())?,
        }
    }
    Ok(())
}

/// Accepts connections until the handle is dropped, one thread per client.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn_server(listener: TcpListener, provider: Arc<dyn GuidanceProvider>, opts: ServeOptions) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let provider = provider.clone();
                    let opts = opts.clone();
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, provider.as_ref(), &opts) {
                            warn!("guidance connection ended with error: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}

/// Loopback server answering every request with zero residuals.
pub fn spawn_echo_server(capability: Capability, opts: ServeOptions) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    spawn_server(listener, Arc::new(super::NullProvider::new(capability)), opts)
}
