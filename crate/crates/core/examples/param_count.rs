use msa_unet3p::{MsaUnet3p, NetworkConfig};
use msa_unet3p::rng::{stream, Domain};
fn main() {
    let mut rng = stream(0, Domain::Init, 0);
    let mut m = MsaUnet3p::<f32>::new(NetworkConfig::paper(), &mut rng).unwrap();
    println!("paper: {}", m.param_count());
    let mut rng = stream(0, Domain::Init, 0);
    let mut d = MsaUnet3p::<f32>::new(NetworkConfig::desk(), &mut rng).unwrap();
    println!("desk: {}", d.param_count());
}
